#pragma once

// Scenario files and report serialization. Times (delays, submit times,
// duration) are expressed in units of the target block time; compute rates
// are VM steps per simulation tick.

#include <fstream>
#include <string>

#include <json.hpp>

#include "posearch/netsim.hpp"
#include "posearch/tsp.hpp"

namespace posearch::sim {

using nlohmann::json;

inline consensus::ChainParams chain_params_from_json(const json& j) {
  consensus::ChainParams p;
  p.miniblocksPerBlock = j.value("miniblocksPerBlock", p.miniblocksPerBlock);
  p.mintPerBlock = Amount{j.value("mintPerBlock", p.mintPerBlock.coins)};
  p.targetBlockTime = j.value("targetBlockTime", p.targetBlockTime);
  p.difficultyWindow = j.value("difficultyWindow", p.difficultyWindow);
  p.zMin = j.value("zMin", p.zMin);
  p.zMax = j.value("zMax", p.zMax);
  p.verifyDepth = j.value("verifyDepth", p.verifyDepth);
  p.evalFloor = j.value("evalFloor", p.evalFloor);
  p.chargeFloor = j.value("chargeFloor", p.chargeFloor);
  p.hashStepCost = j.value("hashStepCost", p.hashStepCost);
  return p;
}

inline Job job_from_json(const json& j) {
  NodeId client = NodeId::from_u64(j.at("client").get<uint64_t>());
  Amount charge{j.at("charge").get<uint64_t>()};
  std::string kind = j.value("kind", "tsp");
  if (kind == "tsp") {
    int cities = j.at("cities").get<int>();
    if (cities < tsp::kMinCities || cities > tsp::kMaxCities)
      throw ConfigError("cities out of range");
    uint64_t instSeed = j.value("instanceSeed", uint64_t(1));
    uint64_t square = j.value("square", uint64_t(4096));
    return tsp::make_job(client, charge, tsp::make_instance(cities, instSeed, square));
  }
  if (kind == "custom") {
    ProgramPair p;
    p.evaluator = Program::from_binary(from_hex(j.at("evaluatorHex").get<std::string>()));
    p.searcher = Program::from_binary(from_hex(j.at("searcherHex").get<std::string>()));
    uint64_t budget = j.at("evalStepBudget").get<uint64_t>();
    return Job::make(client, charge, budget, std::move(p));
  }
  throw ConfigError("unknown job kind: " + kind);
}

inline ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig cfg;
  for (const json& n : j.at("nodes")) {
    NodeSpec spec;
    spec.id = NodeId::from_u64(n.at("id").get<uint64_t>());
    spec.computeRate = n.value("computeRate", 1.0);
    std::string role = n.value("role", "miner");
    if (role == "miner")
      spec.role = NodeRole::miner;
    else if (role == "client")
      spec.role = NodeRole::client;
    else
      throw ConfigError("unknown role: " + role);
    spec.initialBalance = Amount{n.value("initialBalance", uint64_t(0))};
    cfg.nodes.push_back(spec);
  }
  if (j.contains("delay")) {
    const json& d = j.at("delay");
    std::string model = d.value("model", "constant");
    if (model == "constant") {
      cfg.delay.kind = DelayModel::Kind::constant;
      cfg.delay.d = d.value("d", 0.0);
    } else if (model == "uniform") {
      cfg.delay.kind = DelayModel::Kind::uniform;
      cfg.delay.lo = d.at("lo").get<double>();
      cfg.delay.hi = d.at("hi").get<double>();
    } else if (model == "perLink") {
      cfg.delay.kind = DelayModel::Kind::per_link;
      cfg.delay.matrix = d.at("matrix").get<std::vector<std::vector<double>>>();
    } else {
      throw ConfigError("unknown delay model: " + model);
    }
  }
  if (j.contains("chainParams"))
    cfg.chainParams = chain_params_from_json(j.at("chainParams"));
  if (j.contains("jobs")) {
    for (const json& js : j.at("jobs")) {
      JobSpec spec;
      spec.submitTime = js.value("submitTime", 0.0);
      spec.job = job_from_json(js);
      cfg.jobs.push_back(std::move(spec));
    }
  }
  cfg.seed = j.value("seed", uint64_t(1));
  cfg.duration = j.value("duration", 10.0);
  std::string mode = j.value("mode", "faithful");
  if (mode == "faithful")
    cfg.mode = SimMode::faithful;
  else if (mode == "statistical")
    cfg.mode = SimMode::statistical;
  else
    throw ConfigError("unknown mode: " + mode);
  if (j.contains("gossip")) {
    const json& g = j.at("gossip");
    std::string topo = g.value("topology", "fullMesh");
    if (topo == "random") {
      cfg.sparseGossip = true;
      cfg.gossipDegree = g.value("degree", cfg.gossipDegree);
    } else if (topo != "fullMesh") {
      throw ConfigError("unknown topology: " + topo);
    }
  }
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario parse error: ") + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario field error: ") + e.what());
  }
}

inline json report_to_json(const SimulationReport& rep) {
  json out;
  out["blocksOnMainChain"] = rep.blocksOnMainChain;
  out["forkCount"] = rep.forkCount;
  out["eventsProcessed"] = rep.eventsProcessed;
  out["traceDigest"] = rep.traceDigest.hex();
  json chains = json::array();
  for (const auto& fc : rep.finalChains) {
    chains.push_back({{"node", fc.node.as_u64()},
                      {"tipHash", fc.tipHash.hex()},
                      {"height", fc.height},
                      {"pendingMiniblocks", fc.pendingCount}});
  }
  out["finalChains"] = chains;
  if (!rep.blockTimes.empty()) {
    double sum = 0, sq = 0;
    for (double t : rep.blockTimes) {
      sum += t;
      sq += t * t;
    }
    double mean = sum / double(rep.blockTimes.size());
    out["blockTime"] = {{"count", rep.blockTimes.size()},
                        {"mean", mean},
                        {"variance", sq / double(rep.blockTimes.size()) - mean * mean}};
  }
  json wins = json::object();
  for (const auto& [node, n] : rep.perNodeWins) wins[std::to_string(node.as_u64())] = n;
  out["perNodeWins"] = wins;
  json ledger = json::object();
  for (const auto& [node, bal] : rep.ledger.balances)
    ledger[std::to_string(node.as_u64())] = bal.coins;
  out["ledger"] = {{"balances", ledger}, {"supply", rep.ledger.supply.coins}};
  json jobs = json::array();
  for (const JobReport& jr : rep.jobs) {
    json e;
    e["jobId"] = jr.jobId.hex();
    e["client"] = jr.clientId.as_u64();
    e["submitTime"] = jr.submitTime;
    e["registered"] = jr.registered;
    if (jr.registered) e["registeredHeight"] = jr.registeredHeight;
    e["scheduled"] = jr.scheduled;
    if (jr.scheduled) e["scheduledHeight"] = jr.scheduledHeight;
    e["settled"] = jr.settled;
    if (jr.settled) {
      e["settledHeight"] = jr.settledHeight;
      e["outcome"] = jr.paid ? "paid" : "refunded";
      json winners = json::array();
      for (const NodeId& w : jr.winners) winners.push_back(w.as_u64());
      e["winners"] = winners;
      e["paidTotal"] = jr.paidTotal;
    }
    if (jr.winningEval != kWorstEval) e["winningEval"] = jr.winningEval;
    if (!jr.solution.empty()) e["solutionHex"] = to_hex(jr.solution);
    jobs.push_back(e);
  }
  out["jobs"] = jobs;
  json counters = json::object();
  for (const auto& [k, v] : rep.counters) counters[k] = v;
  out["counters"] = counters;
  return out;
}

}  // namespace posearch::sim
