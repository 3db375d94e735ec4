// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "chain_harness.hpp"
#include "posearch/analysis.hpp"
#include "posearch/consensus.hpp"
#include "posearch/mining.hpp"
#include "posearch/netsim.hpp"
#include "posearch/scenario.hpp"
#include "posearch/tsp.hpp"

namespace fs = std::filesystem;
using namespace posearch;
using posearch::testing::ChainHarness;

namespace {

void report_line(int criterion, const char* what, bool pass) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, what);
  std::fflush(stdout);
}

#define REPORT(n, what) report_line(n, what, !::testing::Test::HasFailure())

fs::path scenario_path(const char* name) {
  return fs::path(POSEARCH_SCENARIO_DIR) / name;
}

// 1. Fork probability (Eq. 1 figure convention): Monte Carlo at 10^5 block
// samples within three binomial standard errors of the closed form, for
// d in {0.02, 0.05, 0.1} and N in {1, 2, 4}; whole sweep under two minutes.
TEST(Acceptance, C1_ForkProbability) {
  auto start = std::chrono::steady_clock::now();
  for (double d : {0.02, 0.05, 0.1}) {
    for (uint32_t n : {1u, 2u, 4u}) {
      analysis::AnalysisParams p;
      p.delay = d;
      p.miniblocks = n;
      p.lambdaEqualsN = true;
      p.samples = 100000;
      double analytic = analysis::fork_prob_analytic(p);
      auto mc = analysis::fork_prob_montecarlo(p, 1234 + n * 100 + uint64_t(d * 1000));
      double sigma = std::sqrt(analytic * (1 - analytic) / double(p.samples));
      EXPECT_NEAR(mc.estimate, analytic, 3 * sigma)
          << "d=" << d << " N=" << n;
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                    .count();
  EXPECT_LT(secs, 120.0);
  REPORT(1, "fork probability matches Eq. 1 within 3 sigma at 1e5 samples");
}

// 2. Block time: mean within 2% of 1, variance within 5% of 1/N, and
// Kolmogorov-Smirnov distance to the closed-form CDF below 0.01, over 10^5
// simulated blocks for N in {1, 4, 16}.
TEST(Acceptance, C2_BlockTimeDistribution) {
  for (uint32_t n : {1u, 4u, 16u}) {
    sim::ScenarioConfig cfg;
    cfg.mode = sim::SimMode::statistical;
    cfg.chainParams.zMin = 4;
    cfg.chainParams.zMax = 4;
    cfg.chainParams.miniblocksPerBlock = n;
    // Per-slot rate exactly N per block time.
    cfg.nodes.push_back({NodeId::from_u64(1),
                         double(n) * 2.0 * 16.0 / double(cfg.chainParams.targetBlockTime),
                         sim::NodeRole::miner, Amount{0}});
    cfg.duration = 101000;
    cfg.seed = 40 + n;
    sim::SimulationReport rep = sim::run_scenario(cfg);
    ASSERT_GE(rep.blockTimes.size(), 100000u) << "N=" << n;
    std::vector<double> times(rep.blockTimes.begin(),
                              rep.blockTimes.begin() + 100000);
    double mean = std::accumulate(times.begin(), times.end(), 0.0) / 100000.0;
    double sq = 0;
    for (double t : times) sq += (t - mean) * (t - mean);
    double var = sq / 100000.0;
    EXPECT_NEAR(mean, 1.0, 0.02) << "N=" << n;
    EXPECT_NEAR(var, 1.0 / n, 0.05 / n) << "N=" << n;
    EXPECT_LT(analysis::blocktime_ks_distance(times, n), 0.01) << "N=" << n;
  }
  REPORT(2, "block time mean 1 +-2%, variance 1/N +-5%, KS < 0.01 at 1e5 blocks");
}

// 3. Winning proportionality: three miners at rates 1:2:4, zero delay,
// faithful mode, single slot; win fractions within 5 points of 1/7, 2/7, 4/7
// over at least 10^4 miniblocks.
TEST(Acceptance, C3_WinningProportionality) {
  sim::ScenarioConfig cfg;
  cfg.mode = sim::SimMode::faithful;
  cfg.chainParams.zMin = 4;
  cfg.chainParams.zMax = 4;
  cfg.delay.kind = sim::DelayModel::Kind::constant;
  cfg.delay.d = 0.0;
  cfg.nodes.push_back({NodeId::from_u64(1), 0.2, sim::NodeRole::miner, Amount{0}});
  cfg.nodes.push_back({NodeId::from_u64(2), 0.4, sim::NodeRole::miner, Amount{0}});
  cfg.nodes.push_back({NodeId::from_u64(3), 0.8, sim::NodeRole::miner, Amount{0}});
  cfg.duration = 12;
  cfg.seed = 77;
  sim::SimulationReport rep = sim::run_scenario(cfg);
  uint64_t total = 0;
  for (auto& [node, wins] : rep.perNodeWins) total += wins;
  ASSERT_GE(total, 10000u);
  double f1 = double(rep.perNodeWins[NodeId::from_u64(1)]) / double(total);
  double f2 = double(rep.perNodeWins[NodeId::from_u64(2)]) / double(total);
  double f3 = double(rep.perNodeWins[NodeId::from_u64(3)]) / double(total);
  EXPECT_NEAR(f1, 1.0 / 7, 0.05);
  EXPECT_NEAR(f2, 2.0 / 7, 0.05);
  EXPECT_NEAR(f3, 4.0 / 7, 0.05);
  REPORT(3, "miniblock wins proportional to 1:2:4 compute within 5 points");
}

// 4. Difficulty and reward arithmetic.
TEST(Acceptance, C4_DifficultyAndRewards) {
  consensus::ChainParams params;
  consensus::DifficultyState ds{1048576.0, 100.0};
  tsp::TspInstance inst = tsp::make_instance(4, 1, 64);
  Job j = tsp::make_job(NodeId::from_u64(7), Amount{25}, inst);
  const Job* jobs[] = {&j};
  auto sref = [](const Job&) { return consensus::reference_eval_steps(); };
  auto schedule = consensus::schedule_jobs(jobs, ds, sref, params);
  ASSERT_EQ(schedule.size(), 1u);
  EXPECT_EQ(schedule[0].zeroBits, 18);

  uint16_t z[] = {3, 3, 4};
  auto shares = consensus::compute_rewards(z, Amount{64});
  ASSERT_EQ(shares.size(), 3u);
  EXPECT_EQ(shares[0].coins, 16u);
  EXPECT_EQ(shares[1].coins, 16u);
  EXPECT_EQ(shares[2].coins, 32u);

  Rng rng(31415);
  for (int trial = 0; trial < 10000; ++trial) {
    size_t k = 1 + rng.below(10);
    std::vector<uint16_t> zs;
    for (size_t i = 0; i < k; ++i) zs.push_back(uint16_t(rng.below(41)));
    Amount r{rng.next() >> 24};
    auto out = consensus::compute_rewards(zs, r);
    uint64_t sum = 0;
    for (Amount a : out) sum += a.coins;
    ASSERT_EQ(sum, r.coins);
  }
  REPORT(4, "z=18 schedule example, [16,16,32] split, rewards sum exactly to R");
}

// 5. End-to-end lifecycle on the bundled 6-city scenario: settled at
// registration + 4, winning tour equals the brute-force optimum, escrow
// moves exactly, and supply grows by R every block.
TEST(Acceptance, C5_EndToEndJobLifecycle) {
  sim::ScenarioConfig cfg = sim::load_scenario(scenario_path("tsp_smoke.json").string());
  std::vector<sim::TraceEvent> trace;
  sim::Simulation simulation(cfg, [&](const sim::TraceEvent& ev) {
    trace.push_back(ev);
  });
  sim::SimulationReport rep = simulation.run();
  ASSERT_EQ(rep.jobs.size(), 1u);
  const sim::JobReport& jr = rep.jobs[0];
  ASSERT_TRUE(jr.registered && jr.scheduled && jr.settled);
  EXPECT_TRUE(jr.paid);
  EXPECT_EQ(jr.settledHeight, jr.registeredHeight + 4);
  EXPECT_EQ(jr.paidTotal, 2000u);

  // The revealed tour is the brute-force optimum of the instance.
  tsp::TspInstance inst = tsp::make_instance(6, 3, 4096);
  ASSERT_EQ(job_id(tsp::make_job(NodeId::from_u64(10), Amount{2000}, inst)), jr.jobId);
  Bytes tour = tsp::tour_of_candidate(jr.solution, 6);
  auto best = tsp::oracle::optimal_tour(inst);
  EXPECT_EQ(tsp::oracle::tour_length(inst, tour), best.length);

  // Escrow transferred exactly; nothing left in escrow.
  EXPECT_EQ(rep.ledger.balance(NodeId::from_u64(10)).coins, 2500u - 2000u);
  EXPECT_TRUE(rep.ledger.escrow.empty());

  // Supply grows by exactly R per block over the whole run.
  Chain chain = simulation.materialized_main_chain();
  LedgerState replay;
  uint64_t endowment = 2500;
  for (size_t h = 0; h < chain.blocks.size(); ++h) {
    apply_block_ledger(replay, chain.blocks[h]);
    EXPECT_EQ(replay.supply.coins,
              endowment + uint64_t(h) * cfg.chainParams.mintPerBlock.coins)
        << "height " << h;
  }

  // Commit-reveal ordering: no reveal is broadcast before the commit block
  // (scheduled height + 2) lands on that node's chain.
  Hash256 commitBlockHash = hash_object(chain.blocks[jr.scheduledHeight + 2]);
  std::map<NodeId, uint64_t> commitBlockSeen;
  for (const sim::TraceEvent& ev : trace) {
    if ((ev.kind == "block_add" || ev.kind == "chain_recv") &&
        ev.object == commitBlockHash) {
      if (!commitBlockSeen.count(ev.node)) commitBlockSeen[ev.node] = ev.time;
    }
  }
  bool sawReveal = false;
  for (const sim::TraceEvent& ev : trace) {
    if (ev.kind == "reveal_bcast" && ev.object == jr.jobId) {
      sawReveal = true;
      ASSERT_TRUE(commitBlockSeen.count(ev.node));
      EXPECT_GE(ev.time, commitBlockSeen[ev.node]);
    }
  }
  EXPECT_TRUE(sawReveal);
  REPORT(5, "bundled TSP job pays the optimal tour at registration+4, escrow exact");
}

// 6. Verification soundness: 10^4 honest miniblocks all pass; each tamper
// class is rejected with its own error code.
TEST(Acceptance, C6_VerificationSoundness) {
  using consensus::Rule;
  tsp::TspInstance inst = tsp::make_instance(5, 5, 512);
  Job job = tsp::make_job(NodeId::from_u64(9), Amount{50}, inst);
  Hash256 parentHash = hash_bytes(Bytes{1, 2, 3});
  auto lookup = [&](const Hash256& id) -> const Job* {
    return id == job_id(job) ? &job : nullptr;
  };
  double sj = consensus::job_eval_steps(job);
  mining::MinerPolicy policy;

  // Bulk pass at z=0: every honest production validates.
  std::vector<ScheduleEntry> fast{{job_id(job), 0}};
  std::vector<Miniblock> honest;
  for (int i = 0; i < 10000; ++i) {
    mining::MiningSession s(NodeId::from_u64(uint64_t(i)), parentHash, 0, fast[0], job,
                            sj, policy, uint64_t(i) + 1);
    auto ev = s.next_eval();
    ASSERT_TRUE(ev.found.has_value());
    honest.push_back(*ev.found);
  }
  int passed = 0;
  for (const Miniblock& mb : honest)
    passed += consensus::validate_miniblock(mb, parentHash, fast, lookup).ok();
  EXPECT_EQ(passed, 10000);

  // Tamper cases at z=2.
  std::vector<ScheduleEntry> schedule{{job_id(job), 2}};
  Miniblock mb;
  for (uint64_t seed = 1;; ++seed) {
    mining::MiningSession s(NodeId::from_u64(0xBEEF), parentHash, 0, schedule[0], job,
                            sj, policy, seed);
    auto ev = s.next_eval();
    while (!ev.found) ev = s.next_eval();
    mb = *ev.found;
    break;
  }
  ASSERT_TRUE(consensus::validate_miniblock(mb, parentHash, schedule, lookup).ok());

  Miniblock evalTamper = mb;
  evalTamper.nonce.evalValue += 1;
  EXPECT_EQ(consensus::validate_miniblock(evalTamper, parentHash, schedule, lookup).rule,
            Rule::evaluation_mismatch);

  Miniblock candTamper = mb;
  (*candTamper.nonce.candidate)[0] ^= 0x01;
  EXPECT_EQ(consensus::validate_miniblock(candTamper, parentHash, schedule, lookup).rule,
            Rule::evaluation_mismatch);

  // Insufficient zero bits: an honest z=0 production whose hash misses z=2.
  Miniblock weak;
  bool foundWeak = false;
  for (uint64_t seed = 50000; !foundWeak; ++seed) {
    mining::MiningSession s(NodeId::from_u64(seed), parentHash, 0, fast[0], job, sj,
                            policy, seed);
    auto ev = s.next_eval();
    if (ev.found && leading_zero_bits(hash_object(*ev.found)) < 2) {
      weak = *ev.found;
      foundWeak = true;
    }
  }
  EXPECT_EQ(consensus::validate_miniblock(weak, parentHash, schedule, lookup).rule,
            Rule::insufficient_zeros);

  Miniblock wrongParent = mb;
  wrongParent.prevBlockHash = hash_bytes(Bytes{9, 9});
  EXPECT_EQ(
      consensus::validate_miniblock(wrongParent, parentHash, schedule, lookup).rule,
      Rule::parent_mismatch);
  REPORT(6, "1e4 honest miniblocks pass; four tamper classes rejected by code");
}

// 7. Compaction: a 100-block chain with ~1 KiB job programs compacts to less
// than half its size, still verifies, replays the identical ledger, and
// every sampled single-byte mutation of a retained block field is caught.
TEST(Acceptance, C7_Compaction) {
  consensus::ChainParams params;
  params.zMin = 2;
  params.zMax = 6;
  params.verifyDepth = 10;
  NodeId client = NodeId::from_u64(77);
  ChainHarness h(params, {{client, Amount{100000}}});
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    // Fresh ~1 KiB straight-line evaluator per block.
    ProgramPair p;
    for (int k = 0; k < 110; ++k)
      p.evaluator.instructions.push_back({Op::PUSH, rng.next()});
    p.evaluator.instructions.push_back({Op::HALT, 0});
    p.searcher.instructions = {{Op::RAND, 0}, {Op::PUSH, 0},  {Op::STORE, 0},
                               {Op::PUSH, 8}, {Op::EVAL, 0},  {Op::POP, 0},
                               {Op::JMP, 0}};
    h.submit_job(Job::make(client, Amount{20}, 256, std::move(p)));
    h.advance();
  }
  const Chain& original = h.chain();
  ASSERT_EQ(original.blocks.size(), 101u);
  Chain compacted = consensus::compact_chain(original, params);

  Bytes fullFile = consensus::encode_chain_file(original, params);
  Bytes compactFile = consensus::encode_chain_file(compacted, params);
  EXPECT_LT(double(compactFile.size()), 0.5 * double(fullFile.size()))
      << compactFile.size() << " vs " << fullFile.size();

  EXPECT_TRUE(consensus::verify_chain(compacted, params).ok());
  EXPECT_EQ(compacted.ledger, original.ledger);

  // Mutation sweep over serialized block records (skipping record framing):
  // exhaustive on two representative blocks, sampled on the rest.
  struct Record {
    size_t start, size;
    bool isBlock;
    size_t height;
  };
  std::vector<Record> records;
  {
    size_t pos = 5;  // magic + version
    size_t height = 0;
    while (pos < compactFile.size()) {
      uint32_t len = 0;
      for (int i = 0; i < 4; ++i) len = len << 8 | compactFile[pos + i];
      bool isBlock = compactFile[pos + 4] == uint8_t(Tag::block);
      if (isBlock)
        records.push_back({pos + 4, len, true, height++});
      pos += 4 + len;
    }
  }
  ASSERT_EQ(records.size(), 101u);
  uint64_t checked = 0, detected = 0;
  auto check_mutation = [&](size_t offset) {
    Bytes mutated = compactFile;
    mutated[offset] ^= 0x01;
    ++checked;
    try {
      consensus::ChainFile cf = consensus::decode_chain_file(mutated);
      auto vr = consensus::verify_chain(cf.chain, params);
      if (!vr.ok()) ++detected;
    } catch (const EncodingError&) {
      ++detected;
    }
  };
  for (const Record& rec : records) {
    if (rec.height == 100) continue;  // tip: nothing above commits to it yet
    if (rec.height == 3 || rec.height == 95) {
      for (size_t i = 0; i < rec.size; ++i) check_mutation(rec.start + i);
    } else {
      for (size_t i = 0; i < 8; ++i)
        check_mutation(rec.start + (rec.size * (2 * i + 1)) / 16);
    }
  }
  EXPECT_EQ(detected, checked);
  EXPECT_GT(checked, 1500u);
  REPORT(7, "100-block chain halves in size, verifies, ledger intact, tamper caught");
}

// 8. VM determinism and metering.
TEST(Acceptance, C8_VmDeterminismAndMetering) {
  Rng rng(2024);
  vm::EvalContext ctx{Hash256::zero()};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Instruction> ins;
    uint32_t n = 1 + uint32_t(rng.below(60));
    for (uint32_t i = 0; i < n; ++i) {
      Op op = Op(uint8_t(rng.below(0x19)) + 1);
      if (op == Op::RAND || op == Op::EVAL) op = Op::ADD;
      uint64_t imm = rng.below(70000);
      if (op == Op::JMP || op == Op::JZ) imm = rng.below(n + 1);
      ins.push_back({op, imm});
    }
    Program p{ins};
    Bytes candidate(rng.below(32));
    for (uint8_t& b : candidate) b = uint8_t(rng.next());
    vm::ExecResult a = vm::execute_evaluator(p, candidate, ctx, 2000);
    vm::ExecResult b = vm::execute_evaluator(p, candidate, ctx, 2000);
    ASSERT_EQ(a, b);
  }
  // Straight-line programs report exactly k steps; budget b stops at b.
  for (uint32_t k : {1u, 7u, 100u, 999u}) {
    std::vector<Instruction> ins;
    for (uint32_t i = 0; i < k; ++i) ins.push_back({Op::PUSH, i});
    Program p{ins};
    vm::ExecResult full = vm::execute_evaluator(p, {}, ctx, k + 10);
    EXPECT_EQ(full.stepsUsed, k);
    EXPECT_EQ(full.outcome, vm::ExecResult::Outcome::value);
    uint64_t b = k > 1 ? k / 2 : 1;
    if (b < k) {
      vm::ExecResult cut = vm::execute_evaluator(p, {}, ctx, b);
      EXPECT_EQ(cut.outcome, vm::ExecResult::Outcome::out_of_steps);
      EXPECT_EQ(cut.stepsUsed, b);
    }
  }
  REPORT(8, "1e3 random programs bit-identical twice; metering exact to the step");
}

// 9. Reuse resistance: the 10-city builtin evaluator passes at 10^4 trials,
// a constant evaluator fails.
TEST(Acceptance, C9_ReuseResistance) {
  tsp::TspInstance inst = tsp::make_instance(10, 21);
  Program ev = tsp::make_evaluator(inst);
  Bytes perm = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto rr = vm::estimate_reuse_resistance(ev, perm, ev.instructions.size() + 8, 10000,
                                          99);
  EXPECT_TRUE(rr.passes) << "u=" << rr.uEstimate << " threshold=" << rr.threshold;

  Program constant{{{Op::PUSH, 7}, {Op::HALT, 0}}};
  auto cr = vm::estimate_reuse_resistance(constant, perm, 100, 10000, 99);
  EXPECT_FALSE(cr.passes);
  EXPECT_DOUBLE_EQ(cr.collisionRate, 1.0);
  REPORT(9, "builtin TSP evaluator reuse-resistant; constant evaluator rejected");
}

// 10. Global determinism: the CLI produces byte-identical chain files for a
// fixed seed on every bundled scenario.
TEST(Acceptance, C10_GlobalDeterminism) {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  for (const char* name : {"tsp_smoke.json", "two_miners_pow.json"}) {
    for (int round = 0; round < 2; ++round) {
      fs::path out = fs::temp_directory_path() /
                     (std::string("posearch_acc10_") + std::to_string(round));
      fs::remove_all(out);
      std::string cmd = std::string(POSEARCH_CLI_PATH) + " sim run " +
                        scenario_path(name).string() + " --out " + out.string() +
                        " > /dev/null 2>&1";
      ASSERT_EQ(std::system(cmd.c_str()), 0) << name;
    }
    Bytes a = slurp(fs::temp_directory_path() / "posearch_acc10_0" / "chain.posc");
    Bytes b = slurp(fs::temp_directory_path() / "posearch_acc10_1" / "chain.posc");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b) << name;
  }
  REPORT(10, "sim run is byte-identical across invocations for fixed seeds");
}

}  // namespace
