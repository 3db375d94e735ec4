#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "posearch/consensus.hpp"
#include "posearch/core.hpp"
#include "posearch/mining.hpp"
#include "posearch/rng.hpp"

namespace posearch::sim {

using Ticks = uint64_t;

enum class NodeRole : uint8_t { miner, client };

struct NodeSpec {
  NodeId id;
  double computeRate = 1.0;  // VM steps per tick
  NodeRole role = NodeRole::miner;
  Amount initialBalance{0};
};

struct DelayModel {
  enum class Kind : uint8_t { constant, uniform, per_link } kind = Kind::constant;
  double d = 0;        // units of the target block time
  double lo = 0, hi = 0;
  std::vector<std::vector<double>> matrix;  // [from][to], units of T
};

struct JobSpec {
  double submitTime = 0;  // units of T
  Job job;
};

enum class SimMode : uint8_t { faithful, statistical };

struct ScenarioConfig {
  std::vector<NodeSpec> nodes;
  DelayModel delay;
  consensus::ChainParams chainParams;
  std::vector<JobSpec> jobs;
  uint64_t seed = 1;
  double duration = 10;  // units of T
  SimMode mode = SimMode::faithful;
  bool sparseGossip = false;
  uint32_t gossipDegree = 3;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct TraceEvent {
  Ticks time = 0;
  NodeId node;
  std::string kind;
  Hash256 object;
};

using TraceSink = std::function<void(const TraceEvent&)>;

struct JobReport {
  Hash256 jobId;
  NodeId clientId;
  double submitTime = 0;
  bool registered = false;
  uint64_t registeredHeight = 0;
  bool scheduled = false;
  uint64_t scheduledHeight = 0;
  bool settled = false;
  uint64_t settledHeight = 0;
  bool paid = false;     // settled via payment (else refund)
  std::vector<NodeId> winners;
  uint64_t paidTotal = 0;
  uint64_t winningEval = kWorstEval;
  Bytes solution;
};

struct SimulationReport {
  uint64_t blocksOnMainChain = 0;
  uint64_t forkCount = 0;  // heights with two or more distinct blocks
  std::vector<double> blockTimes;  // units of T, from node 0's final chain
  std::map<NodeId, uint64_t> perNodeWins;  // miniblocks on node 0's final chain
  LedgerState ledger;                      // node 0's final ledger
  std::vector<JobReport> jobs;
  std::map<std::string, uint64_t> counters;
  struct FinalChain {
    NodeId node;
    Hash256 tipHash;
    uint64_t height;
    uint64_t pendingCount;
  };
  std::vector<FinalChain> finalChains;
  Hash256 traceDigest;  // running hash over all trace events
  uint64_t eventsProcessed = 0;
};

namespace detail {

// Immutable shared chain node: blocks reference parents, so competing chains
// share structure and switching tips is O(1).
struct BlockEntry {
  Block block;
  Hash256 hash;
  std::shared_ptr<const BlockEntry> parent;
  std::vector<Miniblock> miniblocks;  // completing this block
  LedgerState ledger;                 // post-state
  std::vector<Job> pendingAfter;      // registered, not yet scheduled
  uint64_t height = 0;
};

using EntryPtr = std::shared_ptr<const BlockEntry>;

// ChainView over a window of ancestors plus the interval under validation.
class DagView : public consensus::ChainView {
public:
  DagView(const EntryPtr& top, uint32_t depth,
          const std::vector<Miniblock>* topInterval = nullptr)
      : topInterval_(topInterval) {
    const BlockEntry* e = top.get();
    while (e) {
      window_.push_back(e);
      if (window_.size() >= depth) break;
      e = e->parent.get();
    }
    base_ = window_.back()->height;
    std::reverse(window_.begin(), window_.end());
    for (const BlockEntry* w : window_)
      for (const Job& j : w->block.newJobs) jobs_[job_id(j)] = &j;
    for (const Job& j : window_.back()->pendingAfter) jobs_[job_id(j)] = &j;
  }

  const Block* block_at(uint64_t h) const override {
    if (h < base_ || h - base_ >= window_.size()) return nullptr;
    return &window_[h - base_]->block;
  }

  const std::vector<Miniblock>* miniblocks_on(uint64_t h) const override {
    uint64_t topHeight = window_.back()->height;
    if (h == topHeight && topInterval_) return topInterval_;
    if (h + 1 >= base_ && h + 1 - base_ < window_.size())
      return &window_[h + 1 - base_]->miniblocks;
    return nullptr;
  }

  const Job* find_job(const Hash256& id) const override {
    auto it = jobs_.find(id);
    return it == jobs_.end() ? nullptr : it->second;
  }

private:
  std::vector<const BlockEntry*> window_;
  uint64_t base_ = 0;
  const std::vector<Miniblock>* topInterval_;
  std::unordered_map<Hash256, const Job*> jobs_;
};

struct ChainAnnounce {
  EntryPtr tip;
  std::vector<Miniblock> pending;
};

struct Message {
  NodeId from;
  std::variant<Job, Transaction, Commit, Reveal, ChainAnnounce> payload;
  Hash256 digest;
};

}  // namespace detail

// Deterministic discrete-event simulator: one event queue, integer ticks,
// ties broken by insertion sequence.
class Simulation {
public:
  // Long chains share parents through shared_ptr links; releasing them
  // tip-first keeps destruction iterative instead of recursing per block.
  ~Simulation() {
    queue_ = {};
    std::vector<detail::EntryPtr> entries;
    entries.reserve(store_.size());
    for (auto& [h, e] : store_) entries.push_back(e);
    store_.clear();
    for (auto& n : nodes_) n->tip.reset();
    genesis_.reset();
    std::sort(entries.begin(), entries.end(),
              [](const detail::EntryPtr& a, const detail::EntryPtr& b) {
                return a->height > b->height;
              });
    for (auto& e : entries) e.reset();
  }

  explicit Simulation(ScenarioConfig cfg, TraceSink sink = nullptr)
      : cfg_(std::move(cfg)), sink_(std::move(sink)) {
    validate_config();
    T_ = cfg_.chainParams.targetBlockTime;
    durationTicks_ = Ticks(cfg_.duration * double(T_));
    delayRng_ = Rng(cfg_.seed).fork(0x64656c61u);
    topologyRng_ = Rng(cfg_.seed).fork(0x746f706fu);
    statRng_ = Rng(cfg_.seed).fork(0x73746174u);

    std::map<NodeId, Amount> endowments;
    for (const NodeSpec& n : cfg_.nodes)
      if (n.initialBalance.coins > 0) endowments[n.id] = n.initialBalance;
    Block genesisBlock = consensus::build_genesis(cfg_.chainParams, endowments);
    auto g = std::make_shared<detail::BlockEntry>();
    g->block = genesisBlock;
    g->hash = hash_object(genesisBlock);
    apply_block_ledger(g->ledger, genesisBlock);
    genesis_ = g;
    record_block(genesis_);

    for (size_t i = 0; i < cfg_.nodes.size(); ++i) {
      auto node = std::make_unique<NodeState>();
      node->spec = cfg_.nodes[i];
      node->index = i;
      node->tip = genesis_;
      node->verified.insert(genesis_->hash);
      nodes_.push_back(std::move(node));
      byId_[cfg_.nodes[i].id] = nodes_.back().get();
    }
    build_topology();
    measure_job_steps();
  }

  SimulationReport run() {
    for (auto& n : nodes_)
      if (n->spec.role == NodeRole::miner) start_mining(*n);
    for (const JobSpec& js : cfg_.jobs) {
      Ticks at = Ticks(js.submitTime * double(T_));
      const Job& job = js.job;
      schedule(at, [this, job] { submit_job(job); });
      JobReport jr;
      jr.jobId = job_id(job);
      jr.clientId = job.clientId;
      jr.submitTime = double(at) / double(T_);
      jobReports_[jr.jobId] = jr;
    }

    while (!queue_.empty()) {
      Event ev = std::move(const_cast<Event&>(queue_.top()));
      queue_.pop();
      if (ev.time > durationTicks_) break;
      now_ = ev.time;
      ++eventsProcessed_;
      ev.fn();
    }
    return build_report();
  }

  // Node 0's final chain as a materialized value, for chain files and
  // offline verification. Call after run().
  Chain materialized_main_chain() const {
    std::vector<const detail::BlockEntry*> entries;
    for (const detail::BlockEntry* e = nodes_[0]->tip.get(); e; e = e->parent.get())
      entries.push_back(e);
    std::reverse(entries.begin(), entries.end());
    Chain c;
    for (size_t i = 0; i < entries.size(); ++i) {
      c.append_block(entries[i]->block);
      if (i + 1 < entries.size())
        c.intervals[i] = entries[i + 1]->miniblocks;
    }
    for (const auto& [slot, mb] : nodes_[0]->pendingSlots) c.add_pending(mb);
    return c;
  }

private:
  struct Event {
    Ticks time;
    uint64_t seq;
    std::function<void()> fn;

    bool operator>(const Event& o) const {
      return time != o.time ? time > o.time : seq > o.seq;
    }
  };

  struct SlotSearch {
    std::optional<mining::MiningSession> session;  // faithful mode
    uint16_t slot = 0;
  };

  struct NodeState {
    NodeSpec spec;
    size_t index = 0;
    detail::EntryPtr tip;
    std::map<uint16_t, Miniblock> pendingSlots;  // slot -> chosen miniblock
    consensus::VerifiedCache verified;
    std::unordered_set<Hash256> seenMessages;
    std::unordered_set<Hash256> reactedBlocks;
    mining::PendingItems items;
    // Best evaluation per (scheduling parent hash, jobId).
    std::map<std::pair<Hash256, Hash256>, mining::BestFound> bestFound;
    SlotSearch search;
    uint64_t mineGen = 0;
    mining::MinerPolicy policy;
    std::vector<size_t> neighbors;
    uint64_t invalidDrops = 0;
    uint64_t lastScanHeight = 0;
  };

  // --- configuration -----------------------------------------------------

  void validate_config() {
    if (cfg_.nodes.empty()) throw ConfigError("no nodes");
    bool miner = false;
    std::set<NodeId> ids;
    for (const NodeSpec& n : cfg_.nodes) {
      if (!ids.insert(n.id).second) throw ConfigError("duplicate node id");
      if (n.role == NodeRole::miner) {
        miner = true;
        if (n.computeRate <= 0) throw ConfigError("miner computeRate must be positive");
      }
    }
    if (!miner) throw ConfigError("at least one miner required");
    if (cfg_.duration <= 0) throw ConfigError("duration must be positive");
    if (cfg_.mode == SimMode::statistical && !cfg_.jobs.empty())
      throw ConfigError("statistical mode runs without client jobs");
    switch (cfg_.delay.kind) {
      case DelayModel::Kind::constant:
        if (cfg_.delay.d < 0) throw ConfigError("negative delay");
        break;
      case DelayModel::Kind::uniform:
        if (cfg_.delay.lo < 0 || cfg_.delay.hi < cfg_.delay.lo)
          throw ConfigError("bad uniform delay bounds");
        break;
      case DelayModel::Kind::per_link:
        if (cfg_.delay.matrix.size() != cfg_.nodes.size())
          throw ConfigError("delay matrix size mismatch");
        for (const auto& row : cfg_.delay.matrix)
          if (row.size() != cfg_.nodes.size())
            throw ConfigError("delay matrix row size mismatch");
        break;
    }
    for (const JobSpec& js : cfg_.jobs) {
      if (js.submitTime < 0) throw ConfigError("negative job submit time");
      if (!js.job.has_bodies()) throw ConfigError("job without program bodies");
    }
  }

  void build_topology() {
    size_t n = nodes_.size();
    if (!cfg_.sparseGossip || n <= cfg_.gossipDegree + 1) {
      for (auto& node : nodes_) {
        for (size_t j = 0; j < n; ++j)
          if (j != node->index) node->neighbors.push_back(j);
      }
      return;
    }
    // Random regular-ish graph: each node links to gossipDegree others; the
    // union of both directions is used for forwarding.
    std::vector<std::set<size_t>> adj(n);
    for (size_t i = 0; i < n; ++i) {
      while (adj[i].size() < cfg_.gossipDegree) {
        size_t j = topologyRng_.below(n);
        if (j == i) continue;
        adj[i].insert(j);
        adj[j].insert(i);
      }
    }
    for (size_t i = 0; i < n; ++i)
      nodes_[i]->neighbors.assign(adj[i].begin(), adj[i].end());
  }

  void measure_job_steps() {
    stepsCache_[consensus::empty_job_id()] =
        consensus::job_eval_steps(consensus::empty_job());
    for (const JobSpec& js : cfg_.jobs)
      stepsCache_[job_id(js.job)] = consensus::job_eval_steps(js.job);
    stepsOf_ = [this](const Job& j) {
      Hash256 id = job_id(j);
      auto it = stepsCache_.find(id);
      if (it != stepsCache_.end()) return it->second;
      double s = consensus::job_eval_steps(j);
      stepsCache_.emplace(id, s);
      return s;
    };
  }

  // --- plumbing ------------------------------------------------------------

  void schedule(Ticks at, std::function<void()> fn) {
    queue_.push(Event{at, seq_++, std::move(fn)});
  }

  void trace(const NodeId& node, const char* kind, const Hash256& object) {
    TraceEvent ev{now_, node, kind, object};
    ByteWriter w;
    w.raw(traceDigest_.bytes);
    w.u64(ev.time);
    w.raw(ev.node.id);
    w.raw(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kind),
                                   std::strlen(kind)));
    w.raw(ev.object.bytes);
    traceDigest_ = hash_bytes(w.bytes());
    if (sink_) sink_(ev);
  }

  Ticks link_delay(size_t from, size_t to) {
    double t = 0;
    switch (cfg_.delay.kind) {
      case DelayModel::Kind::constant: t = cfg_.delay.d; break;
      case DelayModel::Kind::uniform:
        t = cfg_.delay.lo + delayRng_.uniform01() * (cfg_.delay.hi - cfg_.delay.lo);
        break;
      case DelayModel::Kind::per_link: t = cfg_.delay.matrix[from][to]; break;
    }
    return Ticks(t * double(T_));
  }

  void broadcast(NodeState& from, detail::Message msg) {
    from.seenMessages.insert(msg.digest);
    for (size_t j : from.neighbors) {
      Ticks d = link_delay(from.index, j);
      size_t to = j;
      schedule(now_ + d, [this, to, msg] { deliver(*nodes_[to], msg); });
    }
  }

  void deliver(NodeState& node, const detail::Message& msg) {
    if (!node.seenMessages.insert(msg.digest).second) return;
    if (cfg_.sparseGossip) {
      for (size_t j : node.neighbors) {
        Ticks d = link_delay(node.index, j);
        size_t to = j;
        detail::Message copy = msg;
        schedule(now_ + d, [this, to, copy] { deliver(*nodes_[to], copy); });
      }
    }
    std::visit(
        [&](const auto& payload) { handle(node, msg, payload); },
        msg.payload);
  }

  // --- message handlers -------------------------------------------------------

  void handle(NodeState& node, const detail::Message&, const Job& job) {
    trace(node.spec.id, "job_recv", job_id(job));
    node.items.jobs.push_back(job);
  }

  void handle(NodeState& node, const detail::Message&, const Transaction& t) {
    node.items.transactions.push_back(t);
  }

  void handle(NodeState& node, const detail::Message&, const Commit& c) {
    trace(node.spec.id, "commit_recv", c.jobId);
    node.items.commits.push_back(c);
  }

  void handle(NodeState& node, const detail::Message&, const Reveal& r) {
    trace(node.spec.id, "reveal_recv", r.jobId);
    node.items.reveals.push_back(r);
  }

  void handle(NodeState& node, const detail::Message&, const detail::ChainAnnounce& ann) {
    trace(node.spec.id, "chain_recv", ann.tip->hash);
    if (!adopt_if_better(node, ann.tip, ann.pending)) ++node.invalidDrops;
  }

  // --- chain adoption ------------------------------------------------------------

  static consensus::ChainWeight weight_of(const detail::EntryPtr& tip,
                                          const std::map<uint16_t, Miniblock>& pending) {
    consensus::ChainWeight w;
    w.blockCount = tip->height + 1;
    w.pendingCount = pending.size();
    w.tipHash = tip->hash;
    std::vector<Hash256> hashes;
    for (const auto& [slot, mb] : pending) hashes.push_back(hash_object(mb));
    std::sort(hashes.begin(), hashes.end());
    ByteWriter bw;
    for (const Hash256& h : hashes) bw.raw(h.bytes);
    w.pendingDigest = hash_bytes(bw.bytes());
    return w;
  }

  bool validate_entry_chain(NodeState& node, const detail::EntryPtr& tip) {
    if (cfg_.mode == SimMode::statistical) return true;
    // Collect unverified ancestry, then validate oldest-first.
    std::vector<detail::EntryPtr> toCheck;
    for (detail::EntryPtr e = tip; e && !node.verified.count(e->hash); e = e->parent)
      toCheck.push_back(e);
    for (auto it = toCheck.rbegin(); it != toCheck.rend(); ++it) {
      const detail::EntryPtr& e = *it;
      if (e->height == 0) {
        if (e->hash != genesis_->hash) return false;
        node.verified.insert(e->hash);
        continue;
      }
      detail::DagView view(e->parent, view_depth(), &e->miniblocks);
      std::vector<const Job*> pendingBefore;
      for (const Job& j : e->parent->pendingAfter) pendingBefore.push_back(&j);
      consensus::Check c =
          consensus::validate_block(e->block, view, pendingBefore, e->parent->ledger,
                                    cfg_.chainParams, stepsOf_);
      if (!c.ok()) return false;
      node.verified.insert(e->hash);
    }
    return true;
  }

  bool validate_pending(NodeState& node, const detail::EntryPtr& tip,
                        const Miniblock& mb) {
    if (cfg_.mode == SimMode::statistical) return true;
    Hash256 h = hash_object(mb);
    if (node.verified.count(h)) return true;
    detail::DagView view(tip, view_depth());
    consensus::Check c = consensus::validate_miniblock(
        mb, tip->hash, tip->block.scheduledJobs,
        [&](const Hash256& id) { return consensus::lookup_job(view, id); });
    if (!c.ok()) return false;
    node.verified.insert(h);
    return true;
  }

  uint32_t view_depth() const {
    return cfg_.chainParams.difficultyWindow + cfg_.chainParams.pending_retention() + 8;
  }

  // Considers (tip, pending) against the node's current chain; adopts when
  // strictly better. Same-tip announcements merge pending slots with the
  // smaller-hash rule.
  bool adopt_if_better(NodeState& node, const detail::EntryPtr& tip,
                       const std::vector<Miniblock>& pending) {
    if (tip->hash == node.tip->hash) {
      bool changed = false;
      for (const Miniblock& mb : pending)
        changed |= merge_pending(node, tip, mb);
      if (changed && node.spec.role == NodeRole::miner) restart_mining(node);
      return true;
    }
    if (!validate_entry_chain(node, tip)) return false;
    std::map<uint16_t, Miniblock> candPending;
    for (const Miniblock& mb : pending) {
      if (mb.prevBlockHash != tip->hash) continue;
      if (!validate_pending(node, tip, mb)) return false;
      auto it = candPending.find(mb.jobSlot);
      if (it == candPending.end() || hash_object(mb) < hash_object(it->second))
        candPending[mb.jobSlot] = mb;
    }
    if (consensus::compare_weights(weight_of(tip, candPending),
                                   weight_of(node.tip, node.pendingSlots)) <= 0)
      return true;  // valid but not longer
    switch_to(node, tip, std::move(candPending));
    return true;
  }

  bool merge_pending(NodeState& node, const detail::EntryPtr& tip, const Miniblock& mb) {
    if (mb.prevBlockHash != tip->hash) return false;
    if (mb.jobSlot >= tip->block.scheduledJobs.size()) return false;
    if (!validate_pending(node, tip, mb)) {
      ++node.invalidDrops;
      return false;
    }
    auto it = node.pendingSlots.find(mb.jobSlot);
    if (it == node.pendingSlots.end()) {
      node.pendingSlots[mb.jobSlot] = mb;
      trace(node.spec.id, "mb_accept", hash_object(mb));
      maybe_complete_block(node);
      return true;
    }
    if (hash_object(mb) < hash_object(it->second)) {
      it->second = mb;
      return true;
    }
    return false;
  }

  void switch_to(NodeState& node, const detail::EntryPtr& tip,
                 std::map<uint16_t, Miniblock> pending) {
    // Items in orphaned blocks go back into the received queue.
    const detail::BlockEntry* oldBranch = node.tip.get();
    const detail::BlockEntry* newBranch = tip.get();
    while (newBranch->height > oldBranch->height) newBranch = newBranch->parent.get();
    std::vector<const detail::BlockEntry*> orphaned;
    while (oldBranch != newBranch) {
      if (oldBranch->height >= newBranch->height) {
        orphaned.push_back(oldBranch);
        oldBranch = oldBranch->parent.get();
      } else {
        newBranch = newBranch->parent.get();
      }
    }
    for (const detail::BlockEntry* e : orphaned) {
      for (const Job& j : e->block.newJobs) node.items.jobs.push_back(j);
      for (const Transaction& t : e->block.transactions)
        node.items.transactions.push_back(t);
      for (const Commit& c : e->block.commits) node.items.commits.push_back(c);
      for (const Reveal& r : e->block.reveals) node.items.reveals.push_back(r);
    }
    node.tip = tip;
    node.pendingSlots = std::move(pending);
    trace(node.spec.id, "chain_switch", tip->hash);
    react_to_chain(node);
    if (node.spec.role == NodeRole::miner) {
      maybe_complete_block(node);
      restart_mining(node);
    }
    if (node.spec.role == NodeRole::client) scan_for_client(node);
  }

  // --- the four pipeline stages on a new tip --------------------------------------

  // Stages react once per block per node: broadcast commits for the interval
  // that just closed and reveals for commits registered in this block.
  void react_to_chain(NodeState& node) {
    std::vector<const detail::BlockEntry*> fresh;
    for (const detail::BlockEntry* e = node.tip.get();
         e && !node.reactedBlocks.count(e->hash); e = e->parent.get())
      fresh.push_back(e);
    for (auto it = fresh.rbegin(); it != fresh.rend(); ++it)
      react_to_block(node, **it);
  }

  void react_to_block(NodeState& node, const detail::BlockEntry& e) {
    node.reactedBlocks.insert(e.hash);
    if (node.spec.role != NodeRole::miner || cfg_.mode == SimMode::statistical) return;
    const detail::BlockEntry* parent = e.parent.get();
    if (!parent) return;

    // Commits: jobs scheduled by the parent were executed in the interval
    // this block closed.
    for (const ScheduleEntry& s : parent->block.scheduledJobs) {
      if (s.jobId == consensus::empty_job_id()) continue;
      auto key = std::make_pair(parent->hash, s.jobId);
      auto it = node.bestFound.find(key);
      if (it == node.bestFound.end()) continue;
      if (auto c = mining::make_commit(node.spec.id, s.jobId, it->second)) {
        node.items.commits.push_back(*c);
        trace(node.spec.id, "commit_bcast", s.jobId);
        broadcast(node, {node.spec.id, *c, hash_object(*c)});
      }
    }

    // Reveals: this block registered commits for jobs scheduled two back.
    if (node.policy.withholdReveals) return;
    const detail::BlockEntry* sched2 = parent->parent.get();
    if (!sched2) return;
    for (const Commit& c : e.block.commits) {
      if (c.minerId != node.spec.id) continue;
      uint64_t best = kWorstEval;
      for (const Commit& o : e.block.commits)
        if (o.jobId == c.jobId) best = std::min(best, o.evalValue);
      if (c.evalValue != best) continue;
      auto key = std::make_pair(sched2->hash, c.jobId);
      auto it = node.bestFound.find(key);
      if (it == node.bestFound.end()) continue;
      Reveal r{c.jobId, node.spec.id, it->second.candidate};
      node.items.reveals.push_back(r);
      trace(node.spec.id, "reveal_bcast", c.jobId);
      broadcast(node, {node.spec.id, r, hash_object(r)});
    }

    // Retry reveals: commits registered in the parent, your value second
    // best, and this block carries no reveal from a best-value holder.
    const detail::BlockEntry* sched3 = sched2->parent.get();
    if (!sched3) return;
    for (const Commit& c : parent->block.commits) {
      if (c.minerId != node.spec.id) continue;
      uint64_t best = kWorstEval, second = kWorstEval;
      for (const Commit& o : parent->block.commits) {
        if (o.jobId != c.jobId) continue;
        if (o.evalValue < best) {
          second = best;
          best = o.evalValue;
        } else if (o.evalValue < second && o.evalValue != best) {
          second = o.evalValue;
        }
      }
      if (c.evalValue != second || second == best) continue;
      bool bestRevealed = false;
      for (const Reveal& r : e.block.reveals) {
        if (r.jobId != c.jobId) continue;
        for (const Commit& o : parent->block.commits)
          if (o.jobId == c.jobId && o.minerId == r.minerId && o.evalValue == best &&
              solution_hash(r.minerId, r.solution) == o.solutionHash)
            bestRevealed = true;
      }
      if (bestRevealed) continue;
      auto key = std::make_pair(sched3->hash, c.jobId);
      auto it = node.bestFound.find(key);
      if (it == node.bestFound.end()) continue;
      Reveal r{c.jobId, node.spec.id, it->second.candidate};
      node.items.reveals.push_back(r);
      trace(node.spec.id, "reveal_retry_bcast", c.jobId);
      broadcast(node, {node.spec.id, r, hash_object(r)});
    }
  }

  // --- mining ------------------------------------------------------------------------

  void start_mining(NodeState& node) { restart_mining(node); }

  void restart_mining(NodeState& node) {
    ++node.mineGen;
    node.search.session.reset();
    schedule_next_attempt(node);
  }

  std::optional<uint16_t> lowest_unfinished_slot(const NodeState& node) const {
    for (uint16_t s = 0; s < uint16_t(node.tip->block.scheduledJobs.size()); ++s)
      if (!node.pendingSlots.count(s)) return s;
    return std::nullopt;
  }

  void schedule_next_attempt(NodeState& node) {
    auto slot = lowest_unfinished_slot(node);
    if (!slot) return;  // interval complete; block assembly is pending
    if (cfg_.mode == SimMode::statistical) {
      schedule_statistical_attempt(node, *slot);
      return;
    }
    const ScheduleEntry& entry = node.tip->block.scheduledJobs[*slot];
    detail::DagView view(node.tip, view_depth());
    const Job* job = consensus::lookup_job(view, entry.jobId);
    if (!job || !job->has_bodies()) return;
    if (!node.search.session || node.search.slot != *slot) {
      uint64_t seed = mix64(cfg_.seed ^ node.spec.id.as_u64() ^
                            node.tip->hash.word(0) ^ (uint64_t(*slot) << 48));
      node.search.session.emplace(node.spec.id, node.tip->hash, *slot, entry, *job,
                                  stepsOf_(*job), node.policy, seed);
      node.search.slot = *slot;
    }
    // Compute the evaluation now; its result lands after the simulated time
    // the steps take.
    mining::MiningSession::EvalEvent ev = node.search.session->next_eval();
    const mining::BestFound& best = node.search.session->best();
    auto key = std::make_pair(node.tip->hash, entry.jobId);
    if (best.any && entry.jobId != consensus::empty_job_id())
      node.bestFound[key].offer(best.candidate, best.value);
    double steps = double(ev.stepsConsumed) + cfg_.chainParams.hashStepCost;
    Ticks dt = Ticks(std::max(1.0, std::ceil(steps / node.spec.computeRate)));
    uint64_t gen = node.mineGen;
    size_t idx = node.index;
    std::optional<Miniblock> found = std::move(ev.found);
    schedule(now_ + dt, [this, idx, gen, found] {
      NodeState& n = *nodes_[idx];
      if (n.mineGen != gen) return;
      if (found)
        on_own_miniblock(n, *found);
      else
        schedule_next_attempt(n);
    });
  }

  void schedule_statistical_attempt(NodeState& node, uint16_t slot) {
    const ScheduleEntry& entry = node.tip->block.scheduledJobs[slot];
    double sj = stepsCache_.at(entry.jobId);
    double rate = node.spec.computeRate / (sj * std::ldexp(1.0, entry.zeroBits));
    Ticks dt = Ticks(std::max(1.0, std::ceil(statRng_.exponential(rate))));
    uint64_t gen = node.mineGen;
    size_t idx = node.index;
    Hash256 parentHash = node.tip->hash;
    schedule(now_ + dt, [this, idx, gen, slot, parentHash] {
      NodeState& n = *nodes_[idx];
      if (n.mineGen != gen) return;
      Miniblock mb;
      mb.prevBlockHash = parentHash;
      mb.jobSlot = slot;
      mb.minerId = n.spec.id;
      Bytes cand(8);
      for (uint8_t& b : cand) b = uint8_t(statRng_.next());
      mb.nonce = Nonce{std::move(cand), 0};
      on_own_miniblock(n, mb);
    });
  }

  void on_own_miniblock(NodeState& node, const Miniblock& mb) {
    Hash256 h = hash_object(mb);
    trace(node.spec.id, "mb_found", h);
    node.verified.insert(h);
    node.pendingSlots[mb.jobSlot] = mb;
    node.search.session.reset();
    ++node.mineGen;
    if (node.pendingSlots.size() >= node.tip->block.scheduledJobs.size()) {
      // Final miniblock: assemble and announce the block itself, so peers
      // never see a completed interval without its block.
      maybe_complete_block(node);
      return;
    }
    announce_chain(node);
    schedule_next_attempt(node);
  }

  void announce_chain(NodeState& node) {
    detail::ChainAnnounce ann;
    ann.tip = node.tip;
    for (const auto& [slot, mb] : node.pendingSlots) ann.pending.push_back(mb);
    ByteWriter w;
    w.raw(node.tip->hash.bytes);
    std::vector<Hash256> hs;
    for (const Miniblock& m : ann.pending) hs.push_back(hash_object(m));
    std::sort(hs.begin(), hs.end());
    for (const Hash256& h : hs) w.raw(h.bytes);
    Hash256 digest = hash_bytes(w.bytes());
    broadcast(node, {node.spec.id, std::move(ann), digest});
  }

  void maybe_complete_block(NodeState& node) {
    if (node.spec.role != NodeRole::miner) return;
    size_t slots = node.tip->block.scheduledJobs.size();
    if (slots == 0 || node.pendingSlots.size() < slots) return;
    // Assemble: this node observed the final miniblock.
    std::vector<Miniblock> interval;
    for (uint16_t s = 0; s < uint16_t(slots); ++s)
      interval.push_back(node.pendingSlots.at(s));
    detail::DagView view(node.tip, view_depth());
    std::vector<const Job*> pendingBefore;
    for (const Job& j : node.tip->pendingAfter) pendingBefore.push_back(&j);
    mining::AssemblyResult asmres = mining::build_block(
        view, node.tip->block, node.tip->hash, interval, now_, node.items,
        pendingBefore, node.tip->ledger, cfg_.chainParams, stepsOf_);
    node.invalidDrops += asmres.droppedItems;
    node.items.clear();

    auto entry = std::make_shared<detail::BlockEntry>();
    entry->block = std::move(asmres.block);
    entry->hash = hash_object(entry->block);
    entry->parent = node.tip;
    entry->miniblocks = std::move(interval);
    entry->height = entry->block.height;
    entry->ledger = node.tip->ledger;
    apply_block_ledger(entry->ledger, entry->block);
    std::unordered_set<Hash256> scheduledNow;
    for (const ScheduleEntry& s : entry->block.scheduledJobs)
      scheduledNow.insert(s.jobId);
    for (const Job& j : node.tip->pendingAfter)
      if (!scheduledNow.count(job_id(j))) entry->pendingAfter.push_back(j);
    for (const Job& j : entry->block.newJobs)
      if (!scheduledNow.count(job_id(j))) entry->pendingAfter.push_back(j);

    record_block(entry);
    node.verified.insert(entry->hash);
    trace(node.spec.id, "block_add", entry->hash);
    node.tip = entry;
    node.pendingSlots.clear();
    react_to_chain(node);
    announce_chain(node);
    restart_mining(node);
  }

  void record_block(const detail::EntryPtr& e) {
    blocksAtHeight_[e->height].insert(e->hash);
    store_[e->hash] = e;
  }

  // --- clients --------------------------------------------------------------------

  void submit_job(const Job& job) {
    NodeState* client = byId_.count(job.clientId) ? byId_.at(job.clientId) : nullptr;
    Hash256 id = job_id(job);
    trace(job.clientId, "job_submit", id);
    if (client) {
      client->items.jobs.push_back(job);
      broadcast(*client, {job.clientId, job, hash_object(job)});
    } else {
      // Off-network client: node 0 relays the submission.
      nodes_[0]->items.jobs.push_back(job);
      broadcast(*nodes_[0], {job.clientId, job, hash_object(job)});
    }
  }

  void scan_for_client(NodeState& node) {
    // Clients watch their adopted chain for job progress; rescans are cheap
    // at client scales.
    std::vector<const detail::BlockEntry*> chain;
    for (const detail::BlockEntry* e = node.tip.get(); e; e = e->parent.get())
      chain.push_back(e);
    std::reverse(chain.begin(), chain.end());
    for (auto& [id, jr] : jobReports_) {
      if (jr.clientId != node.spec.id) continue;
      JobReport fresh = jr;
      fresh.registered = false;
      fresh.scheduled = false;
      fresh.settled = false;
      fresh.paid = false;
      fresh.winners.clear();
      fresh.paidTotal = 0;
      for (const detail::BlockEntry* e : chain) {
        for (const Job& j : e->block.newJobs)
          if (job_id(j) == id) {
            fresh.registered = true;
            fresh.registeredHeight = e->height;
          }
        for (const ScheduleEntry& s : e->block.scheduledJobs)
          if (s.jobId == id && !fresh.scheduled) {
            fresh.scheduled = true;
            fresh.scheduledHeight = e->height;
          }
        for (const Reveal& r : e->block.reveals)
          if (r.jobId == id) fresh.solution = r.solution;
        for (const PayoutEntry& p : e->block.payouts) {
          if (p.jobId != id) continue;
          if (p.reason == PayoutReason::job_payment) {
            fresh.settled = true;
            fresh.paid = true;
            fresh.settledHeight = e->height;
            fresh.winners.push_back(p.node);
            fresh.paidTotal += p.amount.coins;
          } else if (p.reason == PayoutReason::job_refund) {
            fresh.settled = true;
            fresh.settledHeight = e->height;
            fresh.paidTotal += p.amount.coins;
          }
        }
      }
      // Winning evaluation from the matching commit block.
      if (fresh.paid && fresh.scheduled) {
        uint64_t commitHeight = fresh.scheduledHeight + 2;
        for (const detail::BlockEntry* e : chain) {
          if (e->height != commitHeight) continue;
          for (const Commit& c : e->block.commits)
            if (c.jobId == id &&
                std::find(fresh.winners.begin(), fresh.winners.end(), c.minerId) !=
                    fresh.winners.end())
              fresh.winningEval = std::min(fresh.winningEval, c.evalValue);
        }
        if (fresh.settled && !fresh.solution.empty())
          trace(node.spec.id, "job_solved", id);
      }
      jr = fresh;
    }
  }

  // --- report ---------------------------------------------------------------------

  SimulationReport build_report() {
    SimulationReport rep;
    rep.eventsProcessed = eventsProcessed_;
    rep.traceDigest = traceDigest_;
    for (const auto& [h, hashes] : blocksAtHeight_)
      if (hashes.size() >= 2) ++rep.forkCount;
    NodeState& n0 = *nodes_[0];
    rep.ledger = n0.tip->ledger;
    std::vector<const detail::BlockEntry*> chain;
    for (const detail::BlockEntry* e = n0.tip.get(); e; e = e->parent.get())
      chain.push_back(e);
    std::reverse(chain.begin(), chain.end());
    rep.blocksOnMainChain = chain.size();
    for (size_t i = 1; i < chain.size(); ++i) {
      rep.blockTimes.push_back(
          double(chain[i]->block.timestamp - chain[i - 1]->block.timestamp) /
          double(T_));
      for (const Miniblock& m : chain[i]->miniblocks) ++rep.perNodeWins[m.minerId];
    }
    for (auto& node : nodes_) {
      rep.finalChains.push_back({node->spec.id, node->tip->hash, node->tip->height,
                                 node->pendingSlots.size()});
      rep.counters["invalid_drops"] += node->invalidDrops;
      if (node->spec.role == NodeRole::client) scan_for_client(*node);
    }
    for (auto& [id, jr] : jobReports_) rep.jobs.push_back(jr);
    rep.counters["blocks_created"] = 0;
    for (const auto& [h, hashes] : blocksAtHeight_)
      rep.counters["blocks_created"] += hashes.size();
    return rep;
  }

  ScenarioConfig cfg_;
  TraceSink sink_;
  Ticks T_ = 1;
  Ticks durationTicks_ = 0;
  Ticks now_ = 0;
  uint64_t seq_ = 0;
  uint64_t eventsProcessed_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
  Rng delayRng_{0}, topologyRng_{0}, statRng_{0};
  detail::EntryPtr genesis_;
  std::vector<std::unique_ptr<NodeState>> nodes_;
  std::map<NodeId, NodeState*> byId_;
  std::map<uint64_t, std::set<Hash256>> blocksAtHeight_;
  std::unordered_map<Hash256, detail::EntryPtr> store_;
  std::map<Hash256, JobReport> jobReports_;
  std::map<Hash256, double> stepsCache_;
  std::function<double(const Job&)> stepsOf_;
  Hash256 traceDigest_;
};

// Runs one scenario to completion; the report is a pure function of the
// configuration.
inline SimulationReport run_scenario(const ScenarioConfig& cfg,
                                     TraceSink sink = nullptr) {
  Simulation sim(cfg, std::move(sink));
  return sim.run();
}

}  // namespace posearch::sim
