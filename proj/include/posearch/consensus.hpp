#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "posearch/core.hpp"
#include "posearch/vm.hpp"

namespace posearch::consensus {

struct ChainParams {
  uint32_t miniblocksPerBlock = 1;     // fallback empty slots per block (N)
  Amount mintPerBlock{64};             // total reward per block time (R)
  uint64_t targetBlockTime = 1000000;  // T, in simulation micro-ticks
  uint32_t difficultyWindow = 8;       // blocks measured for E and C
  uint16_t zMin = 4;
  uint16_t zMax = 40;
  uint32_t verifyDepth = 10;           // blocks fully verified behind the tip
  double evalFloor = 65536.0;          // E when the window is empty
  double chargeFloor = 1.0;            // C when no charges were seen
  double hashStepCost = 64.0;          // step-equivalent cost of one hash (h)

  // Registered jobs wait at most this many blocks for a schedule slot; the
  // bound keeps scheduling state ahead of compaction.
  uint32_t pending_retention() const { return verifyDepth; }
};

// Measured scheduling inputs: E evaluations and C total charge per block
// time, from the recent window.
struct DifficultyState {
  double evalsPerBlockTime = 0;   // E
  double chargePerBlockTime = 0;  // C
};

// --- empty job (PoW fallback) ----------------------------------------------

// The canonical empty job: a two-step constant evaluator and a searcher that
// evaluates fresh 8-byte random candidates forever. Every node derives the
// identical object, so fallback slots need no registration.
inline const Job& empty_job() {
  static const Job job = [] {
    ProgramPair p;
    p.evaluator.instructions = {{Op::PUSH, 0}, {Op::HALT, 0}};
    p.searcher.instructions = {{Op::RAND, 0}, {Op::PUSH, 0},  {Op::STORE, 0},
                               {Op::PUSH, 8}, {Op::EVAL, 0},  {Op::POP, 0},
                               {Op::JMP, 0}};
    return Job::make(NodeId{}, Amount{0}, 16, std::move(p), /*isEmpty=*/true);
  }();
  return job;
}

inline const Hash256& empty_job_id() {
  static const Hash256 id = job_id(empty_job());
  return id;
}

// Consensus-visible step cost of one evaluation. Seeded from the job id so
// every node measures the identical value.
inline double job_eval_steps(const Job& j) {
  return vm::measure_eval_steps(j.evaluator(), j.evalStepBudget, 4,
                                job_id(j).word(0));
}

inline double reference_eval_steps() {
  static const double s = job_eval_steps(empty_job());
  return s;
}

// --- difficulty & scheduling -------------------------------------------------

// Scans the trailing window: C is the mean charge registered per block, E the
// mean expected evaluations per interval normalized by the observed block
// time. `recent` is the last difficultyWindow+1 blocks in height order (fewer
// when the chain is short).
inline DifficultyState measure_difficulty_state(std::span<const Block* const> recent,
                                                const ChainParams& params) {
  DifficultyState ds;
  double chargeSum = 0;
  size_t chargeBlocks = 0;
  for (size_t i = recent.size() > params.difficultyWindow
                      ? recent.size() - params.difficultyWindow
                      : 0;
       i < recent.size(); ++i) {
    for (const Job& j : recent[i]->newJobs) chargeSum += double(j.charge.coins);
    ++chargeBlocks;
  }
  ds.chargePerBlockTime = chargeBlocks ? chargeSum / double(chargeBlocks) : 0;
  if (ds.chargePerBlockTime <= 0) ds.chargePerBlockTime = params.chargeFloor;

  double evalSum = 0;
  size_t intervals = 0;
  for (size_t i = 1; i < recent.size(); ++i) {
    const Block* prev = recent[i - 1];
    if (prev->scheduledJobs.empty()) continue;
    double work = 0;
    for (const ScheduleEntry& s : prev->scheduledJobs) work += std::ldexp(1.0, s.zeroBits);
    uint64_t dt = recent[i]->timestamp > prev->timestamp
                      ? recent[i]->timestamp - prev->timestamp
                      : 1;
    evalSum += work / (double(dt) / double(params.targetBlockTime));
    ++intervals;
  }
  ds.evalsPerBlockTime = intervals ? evalSum / double(intervals) : 0;
  if (ds.evalsPerBlockTime <= 0) ds.evalsPerBlockTime = params.evalFloor;
  return ds;
}

inline uint16_t clamp_z(double zRaw, const ChainParams& params) {
  long z = std::lround(zRaw);
  if (z < long(params.zMin)) z = params.zMin;
  if (z > long(params.zMax)) z = params.zMax;
  return uint16_t(z);
}

// Chooses the next interval's jobs and their zero-bit counts. Jobs are taken
// FIFO while the total charge stays within twice C; the head job is always
// taken so large jobs cannot starve. With nothing pending the schedule falls
// back to miniblocksPerBlock empty slots. Zero bits satisfy
// 2^z ~= c * E / C, less one bit per doubling of the evaluator's step cost
// relative to the empty job.
inline std::vector<ScheduleEntry> schedule_jobs(
    std::span<const Job* const> pending, const DifficultyState& ds,
    const std::function<double(const Job&)>& perEvalSteps,
    const ChainParams& params) {
  std::vector<ScheduleEntry> out;
  double chargeSum = 0;
  for (const Job* j : pending) {
    double c = double(j->charge.coins);
    if (!out.empty() && chargeSum + c > 2 * ds.chargePerBlockTime) break;
    chargeSum += c;
    double sj = perEvalSteps(*j);
    double sref = reference_eval_steps();
    double zRaw = std::log2(c * ds.evalsPerBlockTime / ds.chargePerBlockTime) -
                  std::log2(sj / sref);
    out.push_back({job_id(*j), clamp_z(zRaw, params)});
  }
  if (out.empty()) {
    uint16_t z = clamp_z(
        std::log2(ds.evalsPerBlockTime / double(params.miniblocksPerBlock)), params);
    for (uint32_t i = 0; i < params.miniblocksPerBlock; ++i)
      out.push_back({empty_job_id(), z});
  }
  return out;
}

// Reward for slot j is floor(R * 2^z_j / sum 2^z_k); leftover coins go to
// the largest-z slot, the highest such index on ties. Shares always sum to
// R exactly.
inline std::vector<Amount> compute_rewards(std::span<const uint16_t> zeroBits,
                                           Amount totalReward) {
  using u128 = unsigned __int128;
  u128 total = 0;
  for (uint16_t z : zeroBits) total += u128(1) << z;
  std::vector<Amount> shares;
  shares.reserve(zeroBits.size());
  uint64_t paid = 0;
  size_t remainderSlot = 0;
  for (size_t i = 0; i < zeroBits.size(); ++i) {
    u128 num = u128(totalReward.coins) * (u128(1) << zeroBits[i]);
    uint64_t share = uint64_t(num / total);
    shares.push_back(Amount{share});
    paid += share;
    if (zeroBits[i] >= zeroBits[remainderSlot]) remainderSlot = i;
  }
  if (!shares.empty()) shares[remainderSlot].coins += totalReward.coins - paid;
  return shares;
}

// Context digest binding evaluations to (parent block, slot, miner):
// reusing another miner's evaluation output is detectable because the
// second evaluator argument differs.
inline vm::EvalContext eval_context_for(const Hash256& prevBlockHash,
                                        uint16_t jobSlot, const NodeId& minerId) {
  ByteWriter w;
  w.u8(uint8_t(Tag::eval_context));
  w.raw(prevBlockHash.bytes);
  w.u16(jobSlot);
  w.raw(minerId.id);
  return vm::EvalContext{hash_bytes(w.bytes())};
}

// --- validation ---------------------------------------------------------------

enum class Rule : uint8_t {
  ok,
  parent_mismatch,
  bad_height,
  bad_timestamp,
  bad_slot,
  missing_candidate,
  unknown_job,
  bodies_missing,
  evaluation_mismatch,
  insufficient_zeros,
  incomplete_miniblocks,
  miniblock_mismatch,
  bad_transaction,
  bad_job,
  schedule_mismatch,
  commit_invalid,
  reveal_invalid,
  payout_mismatch,
  mint_mismatch,
  ledger_violation,
  hash_link_broken,
  bad_genesis,
};

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::ok: return "ok";
    case Rule::parent_mismatch: return "parent-mismatch";
    case Rule::bad_height: return "bad-height";
    case Rule::bad_timestamp: return "bad-timestamp";
    case Rule::bad_slot: return "bad-slot";
    case Rule::missing_candidate: return "missing-candidate";
    case Rule::unknown_job: return "unknown-job";
    case Rule::bodies_missing: return "bodies-missing";
    case Rule::evaluation_mismatch: return "evaluation-mismatch";
    case Rule::insufficient_zeros: return "insufficient-zeros";
    case Rule::incomplete_miniblocks: return "incomplete-miniblocks";
    case Rule::miniblock_mismatch: return "miniblock-mismatch";
    case Rule::bad_transaction: return "bad-transaction";
    case Rule::bad_job: return "bad-job";
    case Rule::schedule_mismatch: return "schedule-mismatch";
    case Rule::commit_invalid: return "commit-invalid";
    case Rule::reveal_invalid: return "reveal-invalid";
    case Rule::payout_mismatch: return "payout-mismatch";
    case Rule::mint_mismatch: return "mint-mismatch";
    case Rule::ledger_violation: return "ledger-violation";
    case Rule::hash_link_broken: return "hash-link-broken";
    case Rule::bad_genesis: return "bad-genesis";
  }
  return "?";
}

struct Check {
  Rule rule = Rule::ok;
  std::string detail;

  bool ok() const { return rule == Rule::ok; }

  static Check pass() { return {}; }
  static Check fail(Rule r, std::string detail = {}) { return {r, std::move(detail)}; }
};

// Re-executes the evaluator for a miniblock's nonce and checks the hash
// threshold. `jobLookup` must resolve every scheduled job id.
inline Check validate_miniblock(
    const Miniblock& mb, const Hash256& parentHash,
    std::span<const ScheduleEntry> schedule,
    const std::function<const Job*(const Hash256&)>& jobLookup,
    uint64_t* evalRunCounter = nullptr) {
  if (mb.prevBlockHash != parentHash)
    return Check::fail(Rule::parent_mismatch, "miniblock parent hash");
  if (mb.jobSlot >= schedule.size())
    return Check::fail(Rule::bad_slot, "slot " + std::to_string(mb.jobSlot));
  if (!mb.nonce.candidate)
    return Check::fail(Rule::missing_candidate);
  if (mb.nonce.candidate->size() > vm::kMaxCandidateLen)
    return Check::fail(Rule::bad_slot, "candidate too long");
  const ScheduleEntry& slot = schedule[mb.jobSlot];
  const Job* job = jobLookup(slot.jobId);
  if (!job) return Check::fail(Rule::unknown_job, slot.jobId.hex());
  if (!job->has_bodies()) return Check::fail(Rule::bodies_missing);
  vm::EvalContext ctx = eval_context_for(parentHash, mb.jobSlot, mb.minerId);
  if (evalRunCounter) ++*evalRunCounter;
  vm::ExecResult er = vm::execute_evaluator(job->evaluator(), *mb.nonce.candidate,
                                            ctx, job->evalStepBudget);
  if (er.eval_value() != mb.nonce.evalValue)
    return Check::fail(Rule::evaluation_mismatch,
                       "got " + std::to_string(er.eval_value()) + " want " +
                           std::to_string(mb.nonce.evalValue));
  if (leading_zero_bits(hash_object(mb)) < int(slot.zeroBits))
    return Check::fail(Rule::insufficient_zeros,
                       "need " + std::to_string(slot.zeroBits));
  return Check::pass();
}

// --- settlement ----------------------------------------------------------------

inline bool reveal_verifies(const Job& job, const Commit& commit, const Reveal& reveal,
                            const vm::EvalContext& ctx, uint64_t* evalRunCounter = nullptr) {
  if (reveal.solution.size() > vm::kMaxCandidateLen) return false;
  if (solution_hash(commit.minerId, reveal.solution) != commit.solutionHash)
    return false;
  if (evalRunCounter) ++*evalRunCounter;
  vm::ExecResult er = vm::execute_evaluator(job.evaluator(), reveal.solution, ctx,
                                            job.evalStepBudget);
  return er.eval_value() == commit.evalValue;
}

// Splits the charge equally among winners (sorted by id); the remainder goes
// to the lowest node id.
inline std::vector<PayoutEntry> split_charge(const Hash256& jobId, Amount charge,
                                             std::vector<NodeId> winners) {
  std::sort(winners.begin(), winners.end());
  std::vector<PayoutEntry> out;
  uint64_t share = charge.coins / winners.size();
  uint64_t remainder = charge.coins % winners.size();
  for (size_t i = 0; i < winners.size(); ++i)
    out.push_back({winners[i], Amount{share + (i == 0 ? remainder : 0)},
                   PayoutReason::job_payment, jobId});
  return out;
}

struct SettleDecision {
  enum class Kind : uint8_t { pay, refund, retry } kind;
  std::vector<PayoutEntry> payouts;  // filled for pay and refund
};

// First settlement round, computed when building or validating the block at
// scheduling height + 4. Winners are the minimal committed evaluation whose
// reveal verifies under that miner's execution context. No commits at all
// refunds immediately; a best value that nobody substantiated defers to the
// retry round.
inline SettleDecision settle_first_round(
    const Job& job, const Hash256& jobId, std::span<const Commit> commits,
    std::span<const Reveal> reveals,
    const std::function<vm::EvalContext(const NodeId&)>& ctxOf,
    uint64_t* evalRunCounter = nullptr) {
  std::vector<const Commit*> mine;
  for (const Commit& c : commits)
    if (c.jobId == jobId) mine.push_back(&c);
  if (mine.empty())
    return {SettleDecision::Kind::refund,
            {{job.clientId, job.charge, PayoutReason::job_refund, jobId}}};
  uint64_t best = kWorstEval;
  for (const Commit* c : mine) best = std::min(best, c->evalValue);
  std::vector<NodeId> winners;
  for (const Commit* c : mine) {
    if (c->evalValue != best) continue;
    for (const Reveal& r : reveals) {
      if (r.jobId != jobId || r.minerId != c->minerId) continue;
      if (reveal_verifies(job, *c, r, ctxOf(c->minerId), evalRunCounter)) {
        winners.push_back(c->minerId);
        break;
      }
    }
  }
  if (winners.empty()) return {SettleDecision::Kind::retry, {}};
  return {SettleDecision::Kind::pay, split_charge(jobId, job.charge, std::move(winners))};
}

// Retry round one block later: holders of the next-best committed value get
// one reveal window; after that the charge returns to the client.
inline SettleDecision settle_retry_round(
    const Job& job, const Hash256& jobId, std::span<const Commit> commits,
    std::span<const Reveal> retryReveals,
    const std::function<vm::EvalContext(const NodeId&)>& ctxOf,
    uint64_t* evalRunCounter = nullptr) {
  std::vector<const Commit*> mine;
  for (const Commit& c : commits)
    if (c.jobId == jobId) mine.push_back(&c);
  uint64_t best = kWorstEval;
  for (const Commit* c : mine) best = std::min(best, c->evalValue);
  uint64_t second = kWorstEval;
  bool haveSecond = false;
  for (const Commit* c : mine) {
    if (c->evalValue == best) continue;
    if (!haveSecond || c->evalValue < second) {
      second = c->evalValue;
      haveSecond = true;
    }
  }
  std::vector<NodeId> winners;
  if (haveSecond) {
    for (const Commit* c : mine) {
      if (c->evalValue != second) continue;
      for (const Reveal& r : retryReveals) {
        if (r.jobId != jobId || r.minerId != c->minerId) continue;
        if (reveal_verifies(job, *c, r, ctxOf(c->minerId), evalRunCounter)) {
          winners.push_back(c->minerId);
          break;
        }
      }
    }
  }
  if (winners.empty())
    return {SettleDecision::Kind::refund,
            {{job.clientId, job.charge, PayoutReason::job_refund, jobId}}};
  return {SettleDecision::Kind::pay, split_charge(jobId, job.charge, std::move(winners))};
}

// Single-shot settlement: the first-round decision collapsed to its payouts.
// A deferred (retry) outcome yields no payouts here; the block pipeline
// drives the retry round.
inline std::vector<std::pair<NodeId, Amount>> settle_job(
    std::span<const Commit> commits, std::span<const Reveal> reveals, const Job& job,
    const std::map<NodeId, vm::EvalContext>& executionCtxs) {
  auto ctxOf = [&](const NodeId& n) { return executionCtxs.at(n); };
  SettleDecision d = settle_first_round(job, job_id(job), commits, reveals, ctxOf);
  std::vector<std::pair<NodeId, Amount>> out;
  for (const PayoutEntry& p : d.payouts) out.emplace_back(p.node, p.amount);
  return out;
}

// --- block validation ----------------------------------------------------------

// Read access to the chain a block extends. Heights address blocks;
// miniblocks_on(h) returns the interval mined on top of block h.
class ChainView {
public:
  virtual const Block* block_at(uint64_t height) const = 0;
  virtual const std::vector<Miniblock>* miniblocks_on(uint64_t height) const = 0;
  virtual const Job* find_job(const Hash256& id) const = 0;
  virtual ~ChainView() = default;
};

// Resolves scheduled job ids, falling back to the canonical empty job.
inline const Job* lookup_job(const ChainView& view, const Hash256& id) {
  if (id == empty_job_id()) return &empty_job();
  return view.find_job(id);
}

struct ValidationStats {
  uint64_t evalExecutions = 0;
};

// Derives the settlement payouts a block at `height` must carry, from chain
// history alone. Mint entries come first in slot order, then first-round
// settlements for jobs scheduled four blocks back, then retry settlements
// for jobs scheduled five blocks back.
inline Check expected_payouts(const ChainView& view, uint64_t height,
                              const std::vector<NodeId>& slotMiners,
                              const ChainParams& params,
                              std::vector<PayoutEntry>& out, ValidationStats* stats) {
  const Block* parent = view.block_at(height - 1);
  if (!parent->scheduledJobs.empty()) {
    std::vector<uint16_t> zs;
    for (const ScheduleEntry& s : parent->scheduledJobs) zs.push_back(s.zeroBits);
    std::vector<Amount> shares = compute_rewards(zs, params.mintPerBlock);
    for (size_t i = 0; i < shares.size(); ++i)
      out.push_back({slotMiners[i], shares[i], PayoutReason::miniblock_reward, Hash256{}});
  }

  auto settle_for = [&](uint64_t schedHeight, bool retryRound) -> Check {
    const Block* sched = view.block_at(schedHeight);
    const Block* commitBlock = view.block_at(schedHeight + 2);
    const Block* revealBlock = view.block_at(retryRound ? schedHeight + 4 : schedHeight + 3);
    Hash256 schedHash = hash_object(*sched);
    std::unordered_set<Hash256> done;
    for (uint16_t slot = 0; slot < uint16_t(sched->scheduledJobs.size()); ++slot) {
      const Hash256& id = sched->scheduledJobs[slot].jobId;
      if (id == empty_job_id() || done.count(id)) continue;
      done.insert(id);
      if (retryRound) {
        // Skip jobs the first round already settled.
        const Block* firstRound = view.block_at(schedHeight + 4);
        bool settled = false;
        for (const PayoutEntry& p : firstRound->payouts)
          if ((p.reason == PayoutReason::job_payment ||
               p.reason == PayoutReason::job_refund) &&
              p.jobId == id)
            settled = true;
        if (settled) continue;
      }
      const Job* job = lookup_job(view, id);
      if (!job) return Check::fail(Rule::unknown_job, id.hex());
      if (!job->has_bodies()) return Check::fail(Rule::bodies_missing, id.hex());
      auto ctxOf = [&](const NodeId& n) { return eval_context_for(schedHash, slot, n); };
      uint64_t* counter = stats ? &stats->evalExecutions : nullptr;
      SettleDecision d =
          retryRound ? settle_retry_round(*job, id, commitBlock->commits,
                                          revealBlock->reveals, ctxOf, counter)
                     : settle_first_round(*job, id, commitBlock->commits,
                                          revealBlock->reveals, ctxOf, counter);
      for (PayoutEntry& p : d.payouts) out.push_back(std::move(p));
    }
    return Check::pass();
  };

  if (height >= 4)
    if (Check c = settle_for(height - 4, false); !c.ok()) return c;
  if (height >= 5)
    if (Check c = settle_for(height - 5, true); !c.ok()) return c;
  return Check::pass();
}

// Full validation of one block against its chain. `pendingBefore` is the
// FIFO list of registered-but-unscheduled jobs as of the parent. On success
// `postLedger` (when given) receives the ledger after this block.
inline Check validate_block(const Block& b, const ChainView& view,
                            std::span<const Job* const> pendingBefore,
                            const LedgerState& parentLedger, const ChainParams& params,
                            const std::function<double(const Job&)>& stepsOf,
                            LedgerState* postLedger = nullptr,
                            ValidationStats* stats = nullptr) {
  if (b.height == 0) {
    if (!b.prevBlockHash.is_zero()) return Check::fail(Rule::bad_genesis, "prev hash");
    if (!b.miniblockHashes.empty() || !b.transactions.empty() || !b.newJobs.empty() ||
        !b.commits.empty() || !b.reveals.empty())
      return Check::fail(Rule::bad_genesis, "unexpected content");
    for (const PayoutEntry& p : b.payouts)
      if (p.reason != PayoutReason::endowment)
        return Check::fail(Rule::bad_genesis, "non-endowment payout");
    // A genesis with an empty schedule is inert but valid; otherwise the
    // schedule must be the canonical fallback.
    DifficultyState ds = measure_difficulty_state({}, params);
    if (!b.scheduledJobs.empty() &&
        b.scheduledJobs != schedule_jobs({}, ds, stepsOf, params))
      return Check::fail(Rule::bad_genesis, "schedule");
  } else {
    const Block* parent = view.block_at(b.height - 1);
    if (!parent) return Check::fail(Rule::bad_height, "unknown parent");
    Hash256 parentHash = hash_object(*parent);
    if (b.prevBlockHash != parentHash) return Check::fail(Rule::parent_mismatch);
    if (b.timestamp < parent->timestamp) return Check::fail(Rule::bad_timestamp);

    // One valid miniblock per parent schedule slot.
    const std::vector<Miniblock>* interval = view.miniblocks_on(b.height - 1);
    if (b.miniblockHashes.size() != parent->scheduledJobs.size())
      return Check::fail(Rule::incomplete_miniblocks,
                         std::to_string(b.miniblockHashes.size()) + " of " +
                             std::to_string(parent->scheduledJobs.size()));
    std::vector<NodeId> slotMiners(b.miniblockHashes.size());
    for (size_t slot = 0; slot < b.miniblockHashes.size(); ++slot) {
      const Miniblock* found = nullptr;
      if (interval) {
        for (const Miniblock& m : *interval) {
          if (hash_object(m) == b.miniblockHashes[slot]) {
            found = &m;
            break;
          }
        }
      }
      if (!found) return Check::fail(Rule::miniblock_mismatch, "slot " + std::to_string(slot));
      if (found->jobSlot != slot)
        return Check::fail(Rule::miniblock_mismatch, "slot index");
      Check c = validate_miniblock(
          *found, parentHash, parent->scheduledJobs,
          [&](const Hash256& id) { return lookup_job(view, id); },
          stats ? &stats->evalExecutions : nullptr);
      if (!c.ok()) return c;
      slotMiners[slot] = found->minerId;
    }

    for (const Transaction& t : b.transactions)
      if (t.amount.coins == 0) return Check::fail(Rule::bad_transaction, "zero amount");

    // New job registrations.
    for (const Job& j : b.newJobs) {
      if (j.isEmpty) return Check::fail(Rule::bad_job, "explicit empty job");
      if (j.charge.coins == 0) return Check::fail(Rule::bad_job, "zero charge");
      if (j.evalStepBudget == 0) return Check::fail(Rule::bad_job, "zero budget");
      if (!j.has_bodies()) return Check::fail(Rule::bodies_missing, "new job");
      if (validate_program(j.evaluator(), /*forbidSearcherOps=*/true))
        return Check::fail(Rule::bad_job, "evaluator rejected");
      if (validate_program(j.searcher()))
        return Check::fail(Rule::bad_job, "searcher rejected");
      Hash256 id = job_id(j);
      if (view.find_job(id)) return Check::fail(Rule::bad_job, "duplicate registration");
    }

    // Schedule must be the deterministic choice over pending + new jobs.
    std::vector<const Job*> pending(pendingBefore.begin(), pendingBefore.end());
    for (const Job& j : b.newJobs) pending.push_back(&j);
    std::vector<const Block*> recent;
    uint64_t from = b.height > uint64_t(params.difficultyWindow) + 1
                        ? b.height - params.difficultyWindow - 1
                        : 0;
    for (uint64_t h = from; h < b.height; ++h) recent.push_back(view.block_at(h));
    DifficultyState ds = measure_difficulty_state(recent, params);
    if (b.scheduledJobs != schedule_jobs(pending, ds, stepsOf, params))
      return Check::fail(Rule::schedule_mismatch);

    // Commits bind to jobs scheduled two blocks back.
    std::unordered_set<Hash256> commitKeys;
    for (const Commit& c : b.commits) {
      bool scheduled = false;
      if (b.height >= 2) {
        const Block* r = view.block_at(b.height - 2);
        for (const ScheduleEntry& s : r->scheduledJobs)
          if (s.jobId == c.jobId && s.jobId != empty_job_id()) scheduled = true;
      }
      if (!scheduled) return Check::fail(Rule::commit_invalid, "job not in commit window");
      ByteWriter key;
      key.raw(c.jobId.bytes);
      key.raw(c.minerId.id);
      Hash256 k = hash_bytes(key.bytes());
      if (!commitKeys.insert(k).second)
        return Check::fail(Rule::commit_invalid, "duplicate commit");
    }

    // Reveals answer commits from the normal window (scheduled H-3, commits
    // in H-1) or the retry window (scheduled H-4, commits in H-2, and only
    // when the first round paid nothing).
    for (const Reveal& v : b.reveals) {
      const Commit* match = nullptr;
      if (b.height >= 3) {
        const Block* sched = view.block_at(b.height - 3);
        for (const ScheduleEntry& s : sched->scheduledJobs) {
          if (s.jobId != v.jobId) continue;
          for (const Commit& c : view.block_at(b.height - 1)->commits)
            if (c.jobId == v.jobId && c.minerId == v.minerId) match = &c;
        }
      }
      if (!match && b.height >= 4) {
        const Block* sched = view.block_at(b.height - 4);
        for (const ScheduleEntry& s : sched->scheduledJobs) {
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
      if (!match) return Check::fail(Rule::reveal_invalid, "no matching commit");
      if (solution_hash(v.minerId, v.solution) != match->solutionHash)
        return Check::fail(Rule::reveal_invalid, "solution hash mismatch");
    }

    // Payouts are fully determined by history.
    std::vector<PayoutEntry> expected;
    Check pc = expected_payouts(view, b.height, slotMiners, params, expected, stats);
    if (!pc.ok()) return pc;
    uint64_t expectedMint = 0, claimedMint = 0;
    for (const PayoutEntry& p : expected)
      if (p.reason == PayoutReason::miniblock_reward) expectedMint += p.amount.coins;
    for (const PayoutEntry& p : b.payouts) {
      if (p.reason == PayoutReason::endowment)
        return Check::fail(Rule::mint_mismatch, "endowment after genesis");
      if (p.reason == PayoutReason::miniblock_reward) claimedMint += p.amount.coins;
    }
    if (claimedMint != expectedMint)
      return Check::fail(Rule::mint_mismatch, "claimed " + std::to_string(claimedMint) +
                                                  " want " + std::to_string(expectedMint));
    if (b.payouts != expected) return Check::fail(Rule::payout_mismatch);
  }

  LedgerState post = parentLedger;
  try {
    apply_block_ledger(post, b);
  } catch (const LedgerError& e) {
    return Check::fail(Rule::ledger_violation, e.what());
  }
  if (postLedger) *postLedger = std::move(post);
  return Check::pass();
}

// --- chain comparison ------------------------------------------------------------

// Total order on chains: more blocks wins, then more pending miniblocks,
// then the lexicographically smaller tip hash, then the smaller digest of
// the sorted pending set. Deterministic across nodes by construction.
struct ChainWeight {
  uint64_t blockCount = 0;
  uint64_t pendingCount = 0;
  Hash256 tipHash;
  Hash256 pendingDigest;
};

inline ChainWeight weigh_chain(const Chain& c) {
  ChainWeight w;
  w.blockCount = c.blocks.size();
  if (!c.blocks.empty()) {
    w.pendingCount = c.pending().size();
    w.tipHash = hash_object(c.tip());
    std::vector<Hash256> hashes;
    for (const Miniblock& m : c.pending()) hashes.push_back(hash_object(m));
    std::sort(hashes.begin(), hashes.end());
    ByteWriter bw;
    for (const Hash256& h : hashes) bw.raw(h.bytes);
    w.pendingDigest = hash_bytes(bw.bytes());
  }
  return w;
}

// Returns +1 when a is preferred, -1 when b is, 0 on identical weight.
inline int compare_weights(const ChainWeight& a, const ChainWeight& b) {
  if (a.blockCount != b.blockCount) return a.blockCount > b.blockCount ? 1 : -1;
  if (a.pendingCount != b.pendingCount) return a.pendingCount > b.pendingCount ? 1 : -1;
  if (a.tipHash != b.tipHash) return a.tipHash < b.tipHash ? 1 : -1;
  if (a.pendingDigest != b.pendingDigest) return a.pendingDigest < b.pendingDigest ? 1 : -1;
  return 0;
}

inline int compare_chains(const Chain& a, const Chain& b) {
  return compare_weights(weigh_chain(a), weigh_chain(b));
}

// --- whole-chain verification -----------------------------------------------------

using VerifiedCache = std::unordered_set<Hash256>;

struct VerifyReport {
  Check check;
  uint64_t failHeight = ~0ull;
  uint64_t fullBlocks = 0;
  uint64_t relaxedBlocks = 0;
  uint64_t cachedBlocks = 0;
  uint64_t evalExecutions = 0;

  bool ok() const { return check.ok(); }
};

namespace detail {

// ChainView over a materialized chain with an incremental job index.
class MaterializedView : public ChainView {
public:
  explicit MaterializedView(const Chain& c) : chain_(c) {}

  const Block* block_at(uint64_t h) const override {
    return h < chain_.blocks.size() ? &chain_.blocks[h] : nullptr;
  }

  const std::vector<Miniblock>* miniblocks_on(uint64_t h) const override {
    return h < chain_.intervals.size() ? &chain_.intervals[h] : nullptr;
  }

  const Job* find_job(const Hash256& id) const override {
    auto it = jobs_.find(id);
    return it == jobs_.end() ? nullptr : it->second;
  }

  void index_block(const Block& b) {
    for (const Job& j : b.newJobs) jobs_[job_id(j)] = &j;
  }

private:
  const Chain& chain_;
  std::unordered_map<Hash256, const Job*> jobs_;
};

}  // namespace detail

// Walks the chain in order. Blocks behind the verification horizon get the
// relaxed treatment (hash links and header shape only); recent blocks are
// fully re-validated, including evaluator re-execution, unless their hash is
// in the warm cache. Pending tip miniblocks are checked the same way.
inline VerifyReport verify_chain(const Chain& chain, const ChainParams& params,
                                 VerifiedCache* cache = nullptr) {
  VerifyReport report;
  if (chain.blocks.empty()) {
    report.check = Check::fail(Rule::bad_genesis, "empty chain");
    report.failHeight = 0;
    return report;
  }
  uint64_t tipHeight = chain.blocks.size() - 1;
  uint64_t fullStart = tipHeight > params.verifyDepth ? tipHeight - params.verifyDepth : 0;

  detail::MaterializedView view(chain);
  LedgerState ledger;
  // FIFO bookkeeping of registered-but-unscheduled jobs.
  std::vector<const Job*> pendingJobs;
  std::unordered_set<Hash256> scheduledIds;
  ValidationStats stats;
  std::map<Hash256, double> stepsCache;
  std::function<double(const Job&)> stepsOf = [&stepsCache](const Job& j) {
    Hash256 id = job_id(j);
    auto it = stepsCache.find(id);
    if (it != stepsCache.end()) return it->second;
    double s = job_eval_steps(j);
    stepsCache.emplace(id, s);
    return s;
  };

  auto fail = [&](uint64_t height, Check c) {
    report.check = std::move(c);
    report.failHeight = height;
    return report;
  };

  for (uint64_t h = 0; h < chain.blocks.size(); ++h) {
    const Block& b = chain.blocks[h];
    if (b.height != h) return fail(h, Check::fail(Rule::bad_height));
    Hash256 bh = hash_object(b);
    bool cached = cache && cache->count(bh);
    if (h < fullStart) {
      // Relaxed: structural hash-link checks only.
      const Block* parent = h ? &chain.blocks[h - 1] : nullptr;
      if (h == 0) {
        if (!b.prevBlockHash.is_zero())
          return fail(h, Check::fail(Rule::bad_genesis, "prev hash"));
      } else {
        if (b.prevBlockHash != hash_object(*parent))
          return fail(h, Check::fail(Rule::hash_link_broken));
        if (b.timestamp < parent->timestamp)
          return fail(h, Check::fail(Rule::bad_timestamp));
        if (b.miniblockHashes.size() != parent->scheduledJobs.size())
          return fail(h, Check::fail(Rule::incomplete_miniblocks));
      }
      ++report.relaxedBlocks;
      try {
        apply_block_ledger(ledger, b);
      } catch (const LedgerError& e) {
        return fail(h, Check::fail(Rule::ledger_violation, e.what()));
      }
    } else if (cached) {
      ++report.cachedBlocks;
      try {
        apply_block_ledger(ledger, b);
      } catch (const LedgerError& e) {
        return fail(h, Check::fail(Rule::ledger_violation, e.what()));
      }
    } else {
      LedgerState post;
      Check c = validate_block(b, view, pendingJobs, ledger, params, stepsOf, &post,
                               &stats);
      if (!c.ok()) return fail(h, std::move(c));
      ledger = std::move(post);
      ++report.fullBlocks;
      if (cache) cache->insert(bh);
    }

    // Advance the pending-job bookkeeping.
    view.index_block(b);
    for (const ScheduleEntry& s : b.scheduledJobs) scheduledIds.insert(s.jobId);
    for (const Job& j : b.newJobs) pendingJobs.push_back(&j);
    std::erase_if(pendingJobs,
                  [&](const Job* j) { return scheduledIds.count(job_id(*j)) > 0; });
    if (h + 1 >= params.pending_retention()) {
      // Jobs older than the retention window fall out of scheduling.
      std::erase_if(pendingJobs, [&](const Job* j) {
        for (uint64_t back = 0; back < params.pending_retention(); ++back) {
          uint64_t hh = h - back;
          for (const Job& nj : chain.blocks[hh].newJobs)
            if (&nj == j) return false;
          if (hh == 0) break;
        }
        return true;
      });
    }
  }

  // Pending miniblocks on the tip.
  Hash256 tipHash = hash_object(chain.tip());
  for (const Miniblock& m : chain.pending()) {
    Hash256 mh = hash_object(m);
    if (cache && cache->count(mh)) {
      ++report.cachedBlocks;
      continue;
    }
    Check c = validate_miniblock(m, tipHash, chain.tip().scheduledJobs,
                                 [&](const Hash256& id) { return lookup_job(view, id); },
                                 &stats.evalExecutions);
    if (!c.ok()) return fail(tipHeight, std::move(c));
    if (cache) cache->insert(mh);
  }

  report.evalExecutions = stats.evalExecutions;
  report.check = Check::pass();
  return report;
}

// --- compaction ---------------------------------------------------------------------

// Drops job program bodies and nonce candidate bytes from blocks behind the
// horizon, keeping headers, hashes and every ledger-affecting record. The
// result still verifies (relaxed path for old blocks) and replays to the
// identical ledger.
inline Chain compact_chain(const Chain& chain, const ChainParams& params) {
  Chain out = chain;
  if (out.blocks.empty()) return out;
  uint64_t tipHeight = out.blocks.size() - 1;
  // Bodies must survive long enough for schedule and settlement validation
  // of every fully verified block.
  uint64_t keep = uint64_t(params.verifyDepth) + params.pending_retention();
  if (tipHeight <= keep) return out;
  uint64_t cutoff = tipHeight - keep;
  for (uint64_t h = 0; h < cutoff; ++h) {
    for (Job& j : out.blocks[h].newJobs) j.bodies.reset();
    for (Miniblock& m : out.intervals[h]) m.nonce.candidate.reset();
  }
  return out;
}

// --- chain files -------------------------------------------------------------------

// Consensus parameters travel inside the chain file so verification is
// self-contained.
inline Bytes encode_chain_params(const ChainParams& p) {
  ByteWriter w;
  w.u8(uint8_t(Tag::chain_params));
  w.field_u32(p.miniblocksPerBlock);
  w.field_u64(p.mintPerBlock.coins);
  w.field_u64(p.targetBlockTime);
  w.field_u32(p.difficultyWindow);
  w.field_u16(p.zMin);
  w.field_u16(p.zMax);
  w.field_u32(p.verifyDepth);
  w.field_u64(std::bit_cast<uint64_t>(p.evalFloor));
  w.field_u64(std::bit_cast<uint64_t>(p.chargeFloor));
  w.field_u64(std::bit_cast<uint64_t>(p.hashStepCost));
  return w.take();
}

inline ChainParams decode_chain_params(std::span<const uint8_t> data) {
  ByteReader r(data);
  if (r.u8() != uint8_t(Tag::chain_params))
    throw EncodingError("expected chain-params record");
  ChainParams p;
  p.miniblocksPerBlock = r.field_u32();
  p.mintPerBlock = Amount{r.field_u64()};
  p.targetBlockTime = r.field_u64();
  p.difficultyWindow = r.field_u32();
  p.zMin = r.field_u16();
  p.zMax = r.field_u16();
  p.verifyDepth = r.field_u32();
  p.evalFloor = std::bit_cast<double>(r.field_u64());
  p.chargeFloor = std::bit_cast<double>(r.field_u64());
  p.hashStepCost = std::bit_cast<double>(r.field_u64());
  if (!r.done()) throw EncodingError("trailing bytes in chain-params record");
  return p;
}

// Chain file with a leading parameters record.
inline Bytes encode_chain_file(const Chain& chain, const ChainParams& params) {
  ByteWriter w;
  w.raw(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kChainMagic), 4));
  w.u8(kChainVersion);
  w.field(encode_chain_params(params));
  for (size_t h = 0; h < chain.blocks.size(); ++h) {
    w.field(canonical_encode(chain.blocks[h]));
    for (const Miniblock& m : chain.intervals[h]) w.field(canonical_encode(m));
  }
  return w.take();
}

struct ChainFile {
  Chain chain;
  ChainParams params;
  bool hasParams = false;
};

inline ChainFile decode_chain_file(std::span<const uint8_t> data) {
  ChainFile out;
  out.chain = decode_chain(data);
  // Scan records once more for the parameters.
  ByteReader r(data);
  r.raw(4);
  r.u8();
  while (!r.done()) {
    Bytes rec = r.field();
    if (!rec.empty() && rec[0] == uint8_t(Tag::chain_params)) {
      out.params = decode_chain_params(rec);
      out.hasParams = true;
      break;
    }
  }
  return out;
}

// --- genesis -----------------------------------------------------------------------

// Deterministic genesis: endowment payouts plus the empty fallback schedule.
inline Block build_genesis(const ChainParams& params,
                           const std::map<NodeId, Amount>& endowments) {
  Block g;
  g.height = 0;
  g.timestamp = 0;
  for (const auto& [node, amount] : endowments)
    g.payouts.push_back({node, amount, PayoutReason::endowment, Hash256{}});
  DifficultyState ds = measure_difficulty_state({}, params);
  g.scheduledJobs = schedule_jobs({}, ds, [](const Job&) { return 0.0; }, params);
  return g;
}

}  // namespace posearch::consensus
