// posearch: proof-of-search protocol tools — scenario simulation, analysis
// tables, chain verification, program assembly and a TSP demo.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "posearch/analysis.hpp"
#include "posearch/asm.hpp"
#include "posearch/consensus.hpp"
#include "posearch/netsim.hpp"
#include "posearch/scenario.hpp"
#include "posearch/tsp.hpp"

namespace fs = std::filesystem;
using namespace posearch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

uint64_t default_seed() {
  if (const char* env = std::getenv("POSEARCH_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring malformed POSEARCH_SEED\n";
    }
  }
  return 1;
}

std::vector<uint32_t> parse_u32_list(const std::string& s) {
  std::vector<uint32_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(uint32_t(std::stoul(tok)));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

struct Range {
  double from = 0, to = 0, step = 0;
};

// from:to:step, or a single value.
Range parse_range(const std::string& s) {
  Range r;
  size_t c1 = s.find(':');
  if (c1 == std::string::npos) {
    r.from = r.to = std::stod(s);
    r.step = 1;
    return r;
  }
  size_t c2 = s.find(':', c1 + 1);
  if (c2 == std::string::npos) throw std::invalid_argument("range needs from:to:step");
  r.from = std::stod(s.substr(0, c1));
  r.to = std::stod(s.substr(c1 + 1, c2 - c1 - 1));
  r.step = std::stod(s.substr(c2 + 1));
  if (r.step <= 0 || r.to < r.from) throw std::invalid_argument("bad range");
  return r;
}

int cmd_sim_run(const std::string& configPath, std::optional<uint64_t> seedOverride,
                const std::string& outDir, const std::string& modeOverride,
                bool writeTrace, bool writeChain) {
  sim::ScenarioConfig cfg;
  try {
    cfg = sim::load_scenario(configPath);
    if (seedOverride) cfg.seed = *seedOverride;
    if (modeOverride == "faithful")
      cfg.mode = sim::SimMode::faithful;
    else if (modeOverride == "statistical")
      cfg.mode = sim::SimMode::statistical;
    else if (!modeOverride.empty())
      throw sim::ConfigError("unknown mode override: " + modeOverride);
    fs::create_directories(outDir);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    std::ofstream trace;
    sim::TraceSink sink;
    if (writeTrace) {
      trace.open(fs::path(outDir) / "trace.csv");
      trace << "time,node,kind,hash\n";
      sink = [&trace](const sim::TraceEvent& ev) {
        trace << ev.time << ',' << ev.node.as_u64() << ',' << ev.kind << ','
              << ev.object.hex() << '\n';
      };
    }
    sim::Simulation simulation(cfg, sink);
    sim::SimulationReport rep = simulation.run();

    sim::json out = sim::report_to_json(rep);
    out["scenario"] = configPath;
    out["seed"] = cfg.seed;
    out["mode"] = cfg.mode == sim::SimMode::faithful ? "faithful" : "statistical";
    std::ofstream(fs::path(outDir) / "report.json") << out.dump(2) << "\n";

    if (writeChain) {
      Chain chain = simulation.materialized_main_chain();
      Bytes file = consensus::encode_chain_file(chain, cfg.chainParams);
      std::ofstream cf(fs::path(outDir) / "chain.posc", std::ios::binary);
      cf.write(reinterpret_cast<const char*>(file.data()),
               std::streamsize(file.size()));
    }
    std::cout << "blocks " << rep.blocksOnMainChain << ", forks " << rep.forkCount
              << ", events " << rep.eventsProcessed << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_analyze_fork(const std::string& dRange, const std::string& nList,
                     uint64_t samples, uint64_t seed, const std::string& outCsv) {
  Range d;
  std::vector<uint32_t> ns;
  try {
    d = parse_range(dRange);
    ns = parse_u32_list(nList);
  } catch (const std::exception& e) {
    std::cerr << "range error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!outCsv.empty()) {
    file.open(outCsv);
    os = &file;
  }
  *os << "d,n,analytic,montecarlo,stderr\n";
  double maxDev = 0;
  for (uint32_t n : ns) {
    auto series = analysis::fork_series(n, d.from, d.to, d.step, samples, seed);
    for (const auto& pt : series) {
      *os << pt.x << ',' << n << ',' << pt.analytic;
      if (pt.hasMonteCarlo) {
        *os << ',' << pt.montecarlo << ',' << pt.stderrEstimate;
        maxDev = std::max(maxDev, std::abs(pt.montecarlo - pt.analytic));
      } else {
        *os << ",,";
      }
      *os << '\n';
    }
  }
  if (samples > 0)
    std::cout << "max |analytic - montecarlo| = " << maxDev << "\n";
  return kExitOk;
}

int cmd_analyze_blocktime(const std::string& tRange, const std::string& nList,
                          uint64_t samples, uint64_t seed, const std::string& outCsv) {
  Range t;
  std::vector<uint32_t> ns;
  try {
    t = parse_range(tRange);
    ns = parse_u32_list(nList);
  } catch (const std::exception& e) {
    std::cerr << "range error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!outCsv.empty()) {
    file.open(outCsv);
    os = &file;
  }
  *os << "t,n,analytic,empirical,stderr\n";
  double maxDev = 0;
  for (uint32_t n : ns) {
    auto series = analysis::blocktime_series(n, t.from, t.to, t.step, samples, seed);
    for (const auto& pt : series) {
      *os << pt.x << ',' << n << ',' << pt.analytic;
      if (pt.hasMonteCarlo) {
        *os << ',' << pt.montecarlo << ',' << pt.stderrEstimate;
        maxDev = std::max(maxDev, std::abs(pt.montecarlo - pt.analytic));
      } else {
        *os << ",,";
      }
      *os << '\n';
    }
  }
  // Single-point convenience: echo the value.
  if (t.from == t.to && ns.size() == 1)
    std::cout << "b(" << t.from << "; N=" << ns[0] << ") = "
              << analysis::blocktime_cdf(ns[0], t.from) << "\n";
  if (samples > 0)
    std::cout << "max |analytic - empirical| = " << maxDev << "\n";
  return kExitOk;
}

int cmd_chain_verify(const std::string& path) {
  Bytes data;
  try {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } catch (const std::exception& e) {
    std::cerr << "read error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    consensus::ChainFile file = consensus::decode_chain_file(data);
    consensus::ChainParams params =
        file.hasParams ? file.params : consensus::ChainParams{};
    auto report = consensus::verify_chain(file.chain, params);
    if (report.ok()) {
      std::cout << "ok: " << file.chain.blocks.size() << " blocks ("
                << report.fullBlocks << " full, " << report.relaxedBlocks
                << " relaxed), " << report.evalExecutions << " evaluator runs\n";
      return kExitOk;
    }
    std::cout << "invalid at height " << report.failHeight << ": "
              << consensus::rule_name(report.check.rule);
    if (!report.check.detail.empty()) std::cout << " (" << report.check.detail << ")";
    std::cout << "\n";
    return 1;
  } catch (const EncodingError& e) {
    std::cout << "invalid: " << e.what() << "\n";
    return 1;
  }
}

int cmd_asm(const std::string& input, const std::string& output) {
  try {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open " + input);
    std::stringstream ss;
    ss << in.rdbuf();
    Program p = asmtool::assemble(ss.str());
    Bytes bin = p.to_binary();
    std::ofstream out(output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + output);
    out.write(reinterpret_cast<const char*>(bin.data()), std::streamsize(bin.size()));
    std::cout << p.instructions.size() << " instructions, " << bin.size()
              << " bytes\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "asm error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_demo_tsp(int cities, uint64_t charge, int miners, uint64_t seed,
                 const std::string& ratesList) {
  if (cities < tsp::kMinCities || cities > tsp::kMaxCities) {
    std::cerr << "cities must be in [" << tsp::kMinCities << ", " << tsp::kMaxCities
              << "]\n";
    return kExitConfig;
  }
  if (miners < 1 || charge == 0) {
    std::cerr << "need at least one miner and a positive charge\n";
    return kExitConfig;
  }
  std::vector<double> rates(size_t(miners), 1.0);
  if (!ratesList.empty()) {
    std::stringstream ss(ratesList);
    std::string tok;
    size_t i = 0;
    while (std::getline(ss, tok, ',') && i < rates.size()) rates[i++] = std::stod(tok);
  }

  tsp::TspInstance inst = tsp::make_instance(cities, seed);
  sim::ScenarioConfig cfg;
  cfg.mode = sim::SimMode::faithful;
  cfg.chainParams.zMin = 2;
  cfg.chainParams.zMax = 6;
  cfg.delay.kind = sim::DelayModel::Kind::constant;
  cfg.delay.d = 0.01;
  NodeId clientId = NodeId::from_u64(1000);
  for (int m = 0; m < miners; ++m)
    cfg.nodes.push_back({NodeId::from_u64(uint64_t(m) + 1), 0.05 * rates[size_t(m)],
                         sim::NodeRole::miner, Amount{0}});
  cfg.nodes.push_back({clientId, 1.0, sim::NodeRole::client, Amount{charge}});
  sim::JobSpec js;
  js.submitTime = 0.2;
  js.job = tsp::make_job(clientId, Amount{charge}, inst);
  cfg.jobs.push_back(js);
  cfg.duration = 60;
  cfg.seed = seed;

  try {
    sim::SimulationReport rep = sim::run_scenario(cfg);
    const sim::JobReport& jr = rep.jobs.at(0);
    std::cout << "cities: " << cities << ", charge: " << charge << ", miners: "
              << miners << ", seed: " << seed << "\n";
    if (!jr.settled) {
      std::cout << "job did not settle within the simulated window\n";
      return kExitRuntime;
    }
    if (!jr.paid) {
      std::cout << "charge refunded to client\n";
      return kExitOk;
    }
    Bytes tour = tsp::tour_of_candidate(jr.solution, cities);
    std::cout << "winning tour:";
    for (uint8_t c : tour) std::cout << ' ' << int(c);
    std::cout << "\nevaluated length: " << jr.winningEval
              << " (fixed point, scale 2^16)\n";
    std::cout << "exact tour length: " << tsp::oracle::tour_length(inst, tour) << "\n";
    if (cities <= 8) {
      auto best = tsp::oracle::optimal_tour(inst);
      std::cout << "brute-force optimum: " << best.length
                << (tsp::oracle::tour_length(inst, tour) == best.length
                        ? " (tour is optimal)"
                        : "")
                << "\n";
    }
    std::cout << "paid " << jr.paidTotal << " to";
    for (const NodeId& w : jr.winners) std::cout << " node " << w.as_u64();
    std::cout << " at height " << jr.settledHeight << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"proof-of-search protocol tools"};
  app.require_subcommand(1);
  uint64_t seed = default_seed();

  // sim run
  auto* simCmd = app.add_subcommand("sim", "scenario simulation");
  simCmd->require_subcommand(1);
  auto* runCmd = simCmd->add_subcommand("run", "run a scenario file");
  std::string configPath, outDir = "out", modeOverride;
  bool noTrace = false, noChain = false;
  std::optional<uint64_t> seedOverride;
  runCmd->add_option("config", configPath, "scenario JSON file")->required();
  runCmd->add_option("--seed", seedOverride, "override the scenario seed");
  runCmd->add_option("--out", outDir, "output directory");
  runCmd->add_option("--mode", modeOverride, "override mode: faithful|statistical");
  runCmd->add_flag("--no-trace", noTrace, "skip trace.csv");
  runCmd->add_flag("--no-chain", noChain, "skip chain.posc");

  // analyze fork | blocktime
  auto* analyzeCmd = app.add_subcommand("analyze", "closed forms vs Monte Carlo");
  analyzeCmd->require_subcommand(1);
  auto* forkCmd = analyzeCmd->add_subcommand("fork", "fork probability vs delay");
  std::string dRange = "0.0:0.2:0.01", nListFork = "1,2,4,8", forkOut;
  uint64_t forkSamples = 100000, forkSeed = seed;
  forkCmd->add_option("--d", dRange, "delay range from:to:step (block times)");
  forkCmd->add_option("--n", nListFork, "miniblock counts, comma separated");
  forkCmd->add_option("--samples", forkSamples,
                      "Monte Carlo samples (0 = analytic only)");
  forkCmd->add_option("--seed", forkSeed, "Monte Carlo seed");
  forkCmd->add_option("--out", forkOut, "CSV output path (default stdout)");

  auto* btCmd = analyzeCmd->add_subcommand("blocktime", "block time distribution");
  std::string tRange = "0.0:3.0:0.05", nListBt = "1,4,16,64", btOut;
  uint64_t btSamples = 100000, btSeed = seed;
  btCmd->add_option("--t", tRange, "time range from:to:step or a single value");
  btCmd->add_option("--n", nListBt, "miniblock counts, comma separated");
  btCmd->add_option("--samples", btSamples, "Monte Carlo samples (0 = analytic only)");
  btCmd->add_option("--seed", btSeed, "Monte Carlo seed");
  btCmd->add_option("--out", btOut, "CSV output path (default stdout)");

  // chain verify
  auto* chainCmd = app.add_subcommand("chain", "chain file operations");
  chainCmd->require_subcommand(1);
  auto* verifyCmd = chainCmd->add_subcommand("verify", "verify a chain file");
  std::string chainPath;
  verifyCmd->add_option("file", chainPath, "chain file (.posc)")->required();

  // asm
  auto* asmCmd = app.add_subcommand("asm", "assemble a VM program");
  std::string asmIn, asmOut;
  asmCmd->add_option("input", asmIn, "assembly source")->required();
  asmCmd->add_option("-o,--output", asmOut, "binary output")->required();

  // demo tsp
  auto* demoCmd = app.add_subcommand("demo", "built-in demos");
  demoCmd->require_subcommand(1);
  auto* tspCmd = demoCmd->add_subcommand("tsp", "run a TSP job end to end");
  int cities = 6, demoMiners = 2;
  uint64_t demoCharge = 100, demoSeed = seed;
  std::string demoRates;
  tspCmd->add_option("--cities", cities, "number of cities (3..12)");
  tspCmd->add_option("--charge", demoCharge, "job charge");
  tspCmd->add_option("--miners", demoMiners, "number of miners");
  tspCmd->add_option("--seed", demoSeed, "scenario seed");
  tspCmd->add_option("--rates", demoRates, "relative miner rates, comma separated");

  CLI11_PARSE(app, argc, argv);

  if (runCmd->parsed())
    return cmd_sim_run(configPath, seedOverride, outDir, modeOverride, !noTrace,
                       !noChain);
  if (forkCmd->parsed())
    return cmd_analyze_fork(dRange, nListFork, forkSamples, forkSeed, forkOut);
  if (btCmd->parsed())
    return cmd_analyze_blocktime(tRange, nListBt, btSamples, btSeed, btOut);
  if (verifyCmd->parsed()) return cmd_chain_verify(chainPath);
  if (asmCmd->parsed()) return cmd_asm(asmIn, asmOut);
  if (tspCmd->parsed())
    return cmd_demo_tsp(cities, demoCharge, demoMiners, demoSeed, demoRates);
  return kExitConfig;
}
