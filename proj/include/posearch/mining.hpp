#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "posearch/consensus.hpp"
#include "posearch/core.hpp"
#include "posearch/vm.hpp"

namespace posearch::mining {

struct MinerPolicy {
  uint64_t searchStepBudget = 1ull << 24;  // searcher steps per interval slot
  double fallbackFactor = 8.0;             // searcher/evaluation step ratio bound
  bool withholdReveals = false;            // test hook: never broadcast reveals
};

// Best evaluation seen by one miner for one (job, interval).
struct BestFound {
  Bytes candidate;
  uint64_t value = kWorstEval;
  bool any = false;

  void offer(std::span<const uint8_t> c, uint64_t v) {
    if (!any || v < value) {
      candidate.assign(c.begin(), c.end());
      value = v;
      any = true;
    }
  }
};

// Drives the search for one schedule slot. Every evaluation doubles as a
// hash attempt: the candidate and its value form the nonce, and the
// miniblock is publishable when its hash clears the slot's zero bits. A
// searcher that crashes, halts or overruns its budget (or spends more than
// fallbackFactor times the evaluation cost) is replaced by the builtin
// random search.
class MiningSession {
public:
  MiningSession(NodeId miner, const Hash256& parentHash, uint16_t slot,
                const ScheduleEntry& entry, const Job& job, double perEvalSteps,
                const MinerPolicy& policy, uint64_t seed)
      : miner_(miner),
        parentHash_(parentHash),
        slot_(slot),
        zeroBits_(entry.zeroBits),
        job_(&job),
        perEvalSteps_(perEvalSteps),
        policy_(policy),
        ctx_(consensus::eval_context_for(parentHash, slot, miner)),
        fallbackRng_(Rng(seed).fork(0x66616c6cu)) {
    searcher_.start(&job.searcher(), {}, ctx_, policy.searchStepBudget,
                    /*allowSearcherOps=*/true, seed);
  }

  struct EvalEvent {
    uint64_t stepsConsumed = 0;  // searcher plus evaluator steps
    std::optional<Miniblock> found;
  };

  // Runs until the next evaluation completes and reports it.
  EvalEvent next_eval() {
    EvalEvent ev;
    Bytes candidate;
    uint64_t value = 0;
    if (!fallback_) {
      uint64_t before = searcher_.steps();
      vm::Machine::RunStop stop = searcher_.run();
      ev.stepsConsumed = searcher_.steps() - before;
      if (stop.kind == vm::Machine::Stop::eval_request) {
        candidate = searcher_.eval_candidate();
        vm::ExecResult er = vm::execute_evaluator(job_->evaluator(), candidate, ctx_,
                                                  job_->evalStepBudget, &scratch_);
        value = er.eval_value();
        ev.stepsConsumed += er.stepsUsed;
        searcher_.provide_eval_result(value);
        ++evalCount_;
        if (double(searcher_.steps()) >
            policy_.fallbackFactor * double(evalCount_) * perEvalSteps_)
          fallback_ = true;
      } else {
        // Crash, halt or exhausted budget: keep hashing with random search.
        fallback_ = true;
        if (stop.kind == vm::Machine::Stop::crashed) crashed_ = true;
        return next_eval_from_fallback(ev);
      }
    } else {
      return next_eval_from_fallback(ev);
    }
    finish_eval(ev, candidate, value);
    return ev;
  }

  const BestFound& best() const { return best_; }
  uint64_t eval_count() const { return evalCount_; }
  bool searcher_crashed() const { return crashed_; }
  bool in_fallback() const { return fallback_; }
  const vm::EvalContext& ctx() const { return ctx_; }

private:
  EvalEvent next_eval_from_fallback(EvalEvent ev) {
    size_t len = best_.any ? best_.candidate.size() : 8;
    if (len == 0) len = 8;
    Bytes candidate(len);
    for (uint8_t& b : candidate) b = uint8_t(fallbackRng_.next());
    vm::ExecResult er = vm::execute_evaluator(job_->evaluator(), candidate, ctx_,
                                              job_->evalStepBudget, &scratch_);
    ev.stepsConsumed += er.stepsUsed;
    ++evalCount_;
    finish_eval(ev, candidate, er.eval_value());
    return ev;
  }

  void finish_eval(EvalEvent& ev, const Bytes& candidate, uint64_t value) {
    best_.offer(candidate, value);
    Miniblock mb;
    mb.prevBlockHash = parentHash_;
    mb.jobSlot = slot_;
    mb.minerId = miner_;
    mb.nonce = Nonce{candidate, value};
    if (leading_zero_bits(hash_object(mb)) >= int(zeroBits_)) ev.found = std::move(mb);
  }

  NodeId miner_;
  Hash256 parentHash_;
  uint16_t slot_;
  uint16_t zeroBits_;
  const Job* job_;
  double perEvalSteps_;
  MinerPolicy policy_;
  vm::EvalContext ctx_;
  vm::Machine searcher_;
  vm::Machine scratch_;
  Rng fallbackRng_;
  BestFound best_;
  uint64_t evalCount_ = 0;
  bool fallback_ = false;
  bool crashed_ = false;
};

// Library-facing mining loop over one interval: picks the lowest unfinished
// slot, searches until its miniblock is found, then moves on. `stop` is
// polled after every evaluation; finished slots can also be marked done
// externally through the returned callable-driven flow.
struct IntervalOutcome {
  std::vector<Miniblock> produced;
  std::map<Hash256, BestFound> bestByJob;
  uint64_t totalEvals = 0;
};

inline IntervalOutcome mine_interval(
    NodeId miner, const Hash256& parentHash, std::span<const ScheduleEntry> schedule,
    const std::function<const Job*(const Hash256&)>& jobLookup,
    const std::function<double(const Job&)>& perEvalSteps, const MinerPolicy& policy,
    uint64_t seed, const std::function<bool(const Miniblock&)>& onFound) {
  IntervalOutcome out;
  std::vector<bool> finished(schedule.size(), false);
  for (size_t slot = 0; slot < schedule.size(); ++slot) {
    if (finished[slot]) continue;
    const Job* job = jobLookup(schedule[slot].jobId);
    if (!job || !job->has_bodies()) continue;
    MiningSession session(miner, parentHash, uint16_t(slot), schedule[slot], *job,
                          perEvalSteps(*job), policy, Rng(seed).fork(slot).next());
    for (;;) {
      MiningSession::EvalEvent ev = session.next_eval();
      ++out.totalEvals;
      if (ev.found) {
        out.produced.push_back(*ev.found);
        finished[slot] = true;
        auto& best = out.bestByJob[schedule[slot].jobId];
        if (session.best().any) best.offer(session.best().candidate, session.best().value);
        if (onFound(out.produced.back())) return out;
        break;
      }
    }
  }
  return out;
}

// Commit for a job this miner evaluated; abstains (nullopt) when no
// evaluation was performed.
inline std::optional<Commit> make_commit(NodeId miner, const Hash256& jobId,
                                         const BestFound& best) {
  if (!best.any) return std::nullopt;
  Commit c;
  c.jobId = jobId;
  c.minerId = miner;
  c.evalValue = best.value;
  c.solutionHash = solution_hash(miner, best.candidate);
  return c;
}

// Items a miner has received and may fold into the block it assembles.
struct PendingItems {
  std::vector<Transaction> transactions;
  std::vector<Job> jobs;
  std::vector<Commit> commits;
  std::vector<Reveal> reveals;

  void clear() {
    transactions.clear();
    jobs.clear();
    commits.clear();
    reveals.clear();
  }
};

// Assembles the block completing the interval on top of `parent`. Invalid
// received items are silently dropped (counted); payouts are recomputed from
// history so the result always passes validation.
struct AssemblyResult {
  Block block;
  uint64_t droppedItems = 0;
};

inline AssemblyResult build_block(
    const consensus::ChainView& view, const Block& parent, const Hash256& parentHash,
    std::span<const Miniblock> slotMiniblocks,  // one per parent schedule slot
    uint64_t timestamp, const PendingItems& items,
    std::span<const Job* const> pendingJobsBefore, const LedgerState& parentLedger,
    const consensus::ChainParams& params,
    const std::function<double(const Job&)>& stepsOf) {
  AssemblyResult res;
  Block& b = res.block;
  b.prevBlockHash = parentHash;
  b.height = parent.height + 1;
  b.timestamp = std::max(timestamp, parent.timestamp);
  std::vector<NodeId> slotMiners;
  for (const Miniblock& m : slotMiniblocks) {
    b.miniblockHashes.push_back(hash_object(m));
    slotMiners.push_back(m.minerId);
  }

  // Transactions and job registrations are balance-checked in order.
  LedgerState scratch = parentLedger;
  for (const Transaction& t : items.transactions) {
    if (t.amount.coins == 0) {
      ++res.droppedItems;
      continue;
    }
    try {
      scratch.debit(t.from, t.amount);
      scratch.credit(t.to, t.amount);
      b.transactions.push_back(t);
    } catch (const LedgerError&) {
      ++res.droppedItems;
    }
  }
  std::unordered_set<Hash256> registeredNow;
  for (const Job& j : items.jobs) {
    Hash256 id = job_id(j);
    if (j.isEmpty || j.charge.coins == 0 || j.evalStepBudget == 0 || !j.has_bodies() ||
        validate_program(j.evaluator(), true) || validate_program(j.searcher()) ||
        view.find_job(id) || registeredNow.count(id)) {
      ++res.droppedItems;
      continue;
    }
    try {
      scratch.debit(j.clientId, j.charge);
      b.newJobs.push_back(j);
      registeredNow.insert(id);
    } catch (const LedgerError&) {
      ++res.droppedItems;
    }
  }

  std::vector<const Job*> pending(pendingJobsBefore.begin(), pendingJobsBefore.end());
  for (const Job& j : b.newJobs) pending.push_back(&j);
  std::vector<const Block*> recent;
  uint64_t from = b.height > uint64_t(params.difficultyWindow) + 1
                      ? b.height - params.difficultyWindow - 1
                      : 0;
  for (uint64_t h = from; h < b.height; ++h) recent.push_back(view.block_at(h));
  b.scheduledJobs =
      schedule_jobs(pending, consensus::measure_difficulty_state(recent, params),
                    stepsOf, params);

  // Commits for jobs scheduled two blocks back, one per (job, miner).
  std::unordered_set<Hash256> commitKeys;
  for (const Commit& c : items.commits) {
    bool scheduled = false;
    if (b.height >= 2) {
      for (const ScheduleEntry& s : view.block_at(b.height - 2)->scheduledJobs)
        if (s.jobId == c.jobId && s.jobId != consensus::empty_job_id()) scheduled = true;
    }
    ByteWriter key;
    key.raw(c.jobId.bytes);
    key.raw(c.minerId.id);
    Hash256 k = hash_bytes(key.bytes());
    if (!scheduled || !commitKeys.insert(k).second) {
      ++res.droppedItems;
      continue;
    }
    b.commits.push_back(c);
  }

  // Reveals for the normal and retry windows, structurally matched.
  for (const Reveal& v : items.reveals) {
    const Commit* match = nullptr;
    if (b.height >= 3) {
      for (const ScheduleEntry& s : view.block_at(b.height - 3)->scheduledJobs) {
        if (s.jobId != v.jobId) continue;
        for (const Commit& c : view.block_at(b.height - 1)->commits)
          if (c.jobId == v.jobId && c.minerId == v.minerId) match = &c;
      }
    }
    if (!match && b.height >= 4) {
      for (const ScheduleEntry& s : view.block_at(b.height - 4)->scheduledJobs) {
        if (s.jobId != v.jobId) continue;
        bool settled = false;
        for (const PayoutEntry& p : view.block_at(b.height - 1)->payouts)
          if ((p.reason == PayoutReason::job_payment ||
               p.reason == PayoutReason::job_refund) &&
              p.jobId == v.jobId)
            settled = true;
        if (settled) continue;
        for (const Commit& c : view.block_at(b.height - 2)->commits)
          if (c.jobId == v.jobId && c.minerId == v.minerId) match = &c;
      }
    }
    if (!match || solution_hash(v.minerId, v.solution) != match->solutionHash) {
      ++res.droppedItems;
      continue;
    }
    b.reveals.push_back(v);
  }

  std::vector<PayoutEntry> payouts;
  consensus::expected_payouts(view, b.height, slotMiners, params, payouts, nullptr);
  b.payouts = std::move(payouts);
  return res;
}

}  // namespace posearch::mining
