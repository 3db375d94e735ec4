#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "posearch/program.hpp"
#include "posearch/rng.hpp"
#include "posearch/sha256.hpp"
#include "posearch/types.hpp"

namespace posearch::vm {

inline constexpr size_t kMemWords = 65536;
inline constexpr size_t kStackDepth = 1024;
inline constexpr size_t kMaxCandidateLen = 4096;

// Word addresses of the fixed I/O regions. Candidate bytes are packed
// big-endian, eight per word, starting at kInputBase; the context digest
// occupies four words at kCtxBase.
inline constexpr uint64_t kInputBase = 0;
inline constexpr uint64_t kCtxBase = 512;

// Second evaluator argument: a digest binding the evaluation to one miner,
// slot, and chain position.
struct EvalContext {
  Hash256 ctx;

  bool operator==(const EvalContext&) const = default;
};

enum class CrashReason : uint8_t {
  none,
  stack_underflow,
  stack_overflow,
  memory_out_of_bounds,
  division_by_zero,
  illegal_opcode,       // RAND/EVAL outside a searcher run
  candidate_too_long,   // EVAL length above kMaxCandidateLen
  jump_out_of_range,
};

inline const char* crash_reason_name(CrashReason r) {
  switch (r) {
    case CrashReason::none: return "none";
    case CrashReason::stack_underflow: return "stack-underflow";
    case CrashReason::stack_overflow: return "stack-overflow";
    case CrashReason::memory_out_of_bounds: return "memory-out-of-bounds";
    case CrashReason::division_by_zero: return "division-by-zero";
    case CrashReason::illegal_opcode: return "illegal-opcode";
    case CrashReason::candidate_too_long: return "candidate-too-long";
    case CrashReason::jump_out_of_range: return "jump-out-of-range";
  }
  return "?";
}

struct ExecResult {
  enum class Outcome : uint8_t { value, crashed, out_of_steps } outcome;
  uint64_t value = 0;  // meaningful when outcome == value
  CrashReason reason = CrashReason::none;
  uint64_t stepsUsed = 0;

  bool operator==(const ExecResult&) const = default;

  // Consensus-layer view: crashes and exhausted budgets count as the worst
  // evaluation.
  uint64_t eval_value() const {
    return outcome == Outcome::value ? value : kWorstEval;
  }
};

// Zero-initialized word memory with O(1) reset via epoch stamps.
class Memory {
public:
  Memory() : words_(kMemWords, 0), epochs_(kMemWords, 0) {}

  void clear() {
    if (epoch_ == ~0u) {
      std::fill(epochs_.begin(), epochs_.end(), 0);
      epoch_ = 0;
    }
    ++epoch_;
  }

  uint64_t read(uint64_t addr) const {
    return epochs_[addr] == epoch_ ? words_[addr] : 0;
  }

  void write(uint64_t addr, uint64_t v) {
    words_[addr] = v;
    epochs_[addr] = epoch_;
  }

private:
  std::vector<uint64_t> words_;
  std::vector<uint32_t> epochs_;
  uint32_t epoch_ = 1;
};

// Single-threaded, resumable interpreter. One machine instance runs one
// program at a time; run() returns control on halt, crash, budget events or
// when the program requests a host evaluation via EVAL.
class Machine {
public:
  enum class Stop : uint8_t { halted, crashed, out_of_steps, eval_request };

  struct RunStop {
    Stop kind;
    uint64_t value = 0;           // halted: result value
    CrashReason reason = CrashReason::none;
  };

  // allowSearcherOps enables RAND/EVAL; evaluator executions leave it off.
  void start(const Program* prog, std::span<const uint8_t> candidate,
             const EvalContext& ctx, uint64_t stepBudget, bool allowSearcherOps,
             uint64_t randSeed = 0) {
    prog_ = prog;
    mem_.clear();
    stack_.clear();
    ip_ = 0;
    steps_ = 0;
    budget_ = stepBudget;
    searcherOps_ = allowSearcherOps;
    rng_ = Rng(randSeed);
    inputLen_ = candidate.size();
    load_candidate(candidate);
    for (int c = 0; c < 4; ++c) mem_.write(kCtxBase + c, ctx.ctx.word(c));
    pendingEval_ = false;
  }

  // Continues execution until halt, crash, budget exhaustion or the next
  // EVAL. After an eval_request stop the caller must push the evaluation
  // result with provide_eval_result before resuming.
  RunStop run() {
    for (;;) {
      if (steps_ >= budget_) return {Stop::out_of_steps};
      if (ip_ >= prog_->instructions.size()) {
        // Running past the last instruction is an implicit halt.
        return {Stop::halted, stack_.empty() ? 0 : stack_.back()};
      }
      const Instruction& ins = prog_->instructions[ip_];
      ++steps_;
      ++ip_;
      switch (ins.op) {
        case Op::PUSH:
          if (!push(ins.imm)) return crash(CrashReason::stack_overflow);
          break;
        case Op::POP: {
          uint64_t v;
          if (!pop(v)) return crash(CrashReason::stack_underflow);
          break;
        }
        case Op::DUP: {
          if (stack_.empty()) return crash(CrashReason::stack_underflow);
          if (!push(stack_.back())) return crash(CrashReason::stack_overflow);
          break;
        }
        case Op::SWAP: {
          if (stack_.size() < 2) return crash(CrashReason::stack_underflow);
          std::swap(stack_[stack_.size() - 1], stack_[stack_.size() - 2]);
          break;
        }
        case Op::LOAD: {
          uint64_t addr;
          if (!pop(addr)) return crash(CrashReason::stack_underflow);
          if (addr >= kMemWords) return crash(CrashReason::memory_out_of_bounds);
          if (!push(mem_.read(addr))) return crash(CrashReason::stack_overflow);
          break;
        }
        case Op::STORE: {
          uint64_t addr, val;
          if (!pop(addr) || !pop(val)) return crash(CrashReason::stack_underflow);
          if (addr >= kMemWords) return crash(CrashReason::memory_out_of_bounds);
          mem_.write(addr, val);
          break;
        }
        case Op::ADD: case Op::SUB: case Op::MUL: case Op::DIV: case Op::MOD:
        case Op::AND: case Op::OR: case Op::XOR: case Op::SHL: case Op::SHR:
        case Op::LT: case Op::EQ: {
          uint64_t rhs, lhs;
          if (!pop(rhs) || !pop(lhs)) return crash(CrashReason::stack_underflow);
          uint64_t out = 0;
          switch (ins.op) {
            case Op::ADD: out = lhs + rhs; break;
            case Op::SUB: out = lhs - rhs; break;
            case Op::MUL: out = lhs * rhs; break;
            case Op::DIV:
              if (rhs == 0) return crash(CrashReason::division_by_zero);
              out = lhs / rhs;
              break;
            case Op::MOD:
              if (rhs == 0) return crash(CrashReason::division_by_zero);
              out = lhs % rhs;
              break;
            case Op::AND: out = lhs & rhs; break;
            case Op::OR: out = lhs | rhs; break;
            case Op::XOR: out = lhs ^ rhs; break;
            case Op::SHL: out = rhs >= 64 ? 0 : lhs << rhs; break;
            case Op::SHR: out = rhs >= 64 ? 0 : lhs >> rhs; break;
            case Op::LT: out = lhs < rhs ? 1 : 0; break;
            case Op::EQ: out = lhs == rhs ? 1 : 0; break;
            default: break;
          }
          push_unchecked(out);
          break;
        }
        case Op::NOT: {
          uint64_t v;
          if (!pop(v)) return crash(CrashReason::stack_underflow);
          push_unchecked(v == 0 ? 1 : 0);
          break;
        }
        case Op::JMP:
          if (ins.imm > prog_->instructions.size())
            return crash(CrashReason::jump_out_of_range);
          ip_ = size_t(ins.imm);
          break;
        case Op::JZ: {
          uint64_t v;
          if (!pop(v)) return crash(CrashReason::stack_underflow);
          if (v == 0) {
            if (ins.imm > prog_->instructions.size())
              return crash(CrashReason::jump_out_of_range);
            ip_ = size_t(ins.imm);
          }
          break;
        }
        case Op::INPUTLEN:
          if (!push(inputLen_)) return crash(CrashReason::stack_overflow);
          break;
        case Op::RAND:
          if (!searcherOps_) return crash(CrashReason::illegal_opcode);
          if (!push(rng_.next())) return crash(CrashReason::stack_overflow);
          break;
        case Op::EVAL: {
          if (!searcherOps_) return crash(CrashReason::illegal_opcode);
          uint64_t len;
          if (!pop(len)) return crash(CrashReason::stack_underflow);
          if (len > kMaxCandidateLen) return crash(CrashReason::candidate_too_long);
          pendingEval_ = true;
          evalCandidate_.resize(len);
          for (uint64_t i = 0; i < len; ++i) {
            uint64_t w = mem_.read(kInputBase + i / 8);
            evalCandidate_[i] = uint8_t(w >> (56 - 8 * (i % 8)));
          }
          return {Stop::eval_request};
        }
        case Op::HALT:
          return {Stop::halted, stack_.empty() ? 0 : stack_.back()};
      }
    }
  }

  // Candidate bytes captured by the pending EVAL.
  const Bytes& eval_candidate() const { return evalCandidate_; }

  // Resumes after an eval_request by pushing the evaluation value.
  bool provide_eval_result(uint64_t value) {
    pendingEval_ = false;
    return push(value);
  }

  uint64_t steps() const { return steps_; }
  uint64_t budget() const { return budget_; }
  bool eval_pending() const { return pendingEval_; }

private:
  bool push(uint64_t v) {
    if (stack_.size() >= kStackDepth) return false;
    stack_.push_back(v);
    return true;
  }

  void push_unchecked(uint64_t v) { stack_.push_back(v); }

  bool pop(uint64_t& out) {
    if (stack_.empty()) return false;
    out = stack_.back();
    stack_.pop_back();
    return true;
  }

  RunStop crash(CrashReason r) { return {Stop::crashed, 0, r}; }

  void load_candidate(std::span<const uint8_t> c) {
    for (size_t i = 0; i < c.size(); i += 8) {
      uint64_t w = 0;
      for (size_t j = 0; j < 8 && i + j < c.size(); ++j)
        w |= uint64_t(c[i + j]) << (56 - 8 * j);
      mem_.write(kInputBase + i / 8, w);
    }
  }

  const Program* prog_ = nullptr;
  Memory mem_;
  std::vector<uint64_t> stack_;
  size_t ip_ = 0;
  uint64_t steps_ = 0;
  uint64_t budget_ = 0;
  bool searcherOps_ = false;
  Rng rng_{0};
  uint64_t inputLen_ = 0;
  bool pendingEval_ = false;
  Bytes evalCandidate_;
};

// One-shot evaluator execution: a deterministic function of
// (program, candidate, ctx). Every retired instruction costs one step and
// execution stops with OutOfSteps after exactly `budget` steps.
inline ExecResult execute_evaluator(const Program& evaluator,
                                    std::span<const uint8_t> candidate,
                                    const EvalContext& ctx, uint64_t budget,
                                    Machine* scratch = nullptr) {
  // Evaluator runs cannot nest (EVAL is rejected inside them), so a shared
  // per-thread machine is safe and avoids a 0.7 MB allocation per call.
  static thread_local Machine shared;
  Machine& m = scratch ? *scratch : shared;
  m.start(&evaluator, candidate, ctx, budget, /*allowSearcherOps=*/false);
  Machine::RunStop stop = m.run();
  switch (stop.kind) {
    case Machine::Stop::halted:
      return {ExecResult::Outcome::value, stop.value, CrashReason::none, m.steps()};
    case Machine::Stop::crashed:
      return {ExecResult::Outcome::crashed, 0, stop.reason, m.steps()};
    default:
      return {ExecResult::Outcome::out_of_steps, 0, CrashReason::none, m.steps()};
  }
}

enum class OnEval : uint8_t { cont, stop };

struct SearchOutcome {
  std::optional<Bytes> bestCandidate;
  uint64_t bestValue = kWorstEval;
  uint64_t evalCount = 0;
  uint64_t searcherSteps = 0;
  bool crashed = false;
};

// Runs a searcher with the host evaluation hook. Each EVAL hands the
// candidate region to the host, which executes the evaluator under
// evalBudget, reports (candidate, value) to onEval, and pushes the value
// onto the searcher's stack. The run ends when onEval returns stop, the
// searcher halts or crashes, or searchStepBudget is exhausted.
inline SearchOutcome run_searcher(
    const Program& searcher, const Program& evaluator, const EvalContext& ctx,
    uint64_t evalBudget, uint64_t searchStepBudget, uint64_t seed,
    const std::function<OnEval(std::span<const uint8_t>, uint64_t)>& onEval) {
  SearchOutcome out;
  Machine sm;
  Machine em;
  sm.start(&searcher, {}, ctx, searchStepBudget, /*allowSearcherOps=*/true, seed);
  for (;;) {
    Machine::RunStop stop = sm.run();
    out.searcherSteps = sm.steps();
    if (stop.kind == Machine::Stop::halted) return out;
    if (stop.kind == Machine::Stop::out_of_steps) return out;
    if (stop.kind == Machine::Stop::crashed) {
      out.crashed = true;
      return out;
    }
    // eval_request
    Bytes candidate = sm.eval_candidate();
    ExecResult er = execute_evaluator(evaluator, candidate, ctx, evalBudget, &em);
    uint64_t value = er.eval_value();
    ++out.evalCount;
    if (value < out.bestValue || !out.bestCandidate) {
      out.bestValue = value;
      out.bestCandidate = candidate;
    }
    if (onEval(candidate, value) == OnEval::stop) return out;
    if (!sm.provide_eval_result(value)) {
      out.crashed = true;
      return out;
    }
  }
}

// Mean steps per evaluation over `samples` seeded random candidates and
// contexts. Crashes count with the steps they consumed.
inline double measure_eval_steps(const Program& evaluator, uint64_t budget,
                                 uint32_t samples, uint64_t seed) {
  Rng rng(seed);
  Machine m;
  uint64_t total = 0;
  for (uint32_t i = 0; i < samples; ++i) {
    Bytes candidate(rng.below(64) + 1);
    for (uint8_t& b : candidate) b = uint8_t(rng.next());
    EvalContext ctx;
    for (int c = 0; c < 4; ++c) {
      uint64_t w = rng.next();
      for (int j = 0; j < 8; ++j) ctx.ctx.bytes[c * 8 + j] = uint8_t(w >> (56 - 8 * j));
    }
    total += execute_evaluator(evaluator, candidate, ctx, budget, &m).stepsUsed;
  }
  return double(total) / double(samples);
}

struct ReuseResistance {
  double collisionRate = 0;  // duplicate-output fraction over pairs
  double uEstimate = 0;      // 1 / collisionRate; infinity when no collisions
  double threshold = 0;      // (s_j + h) / h
  bool passes = false;
};

// Measures how often the evaluator repeats an output across distinct
// contexts for a fixed candidate, and compares the implied reuse rate
// against the profitability bound, where hashStepCost is the calibrated
// step-equivalent cost of one hash computation.
inline ReuseResistance estimate_reuse_resistance(const Program& evaluator,
                                                 std::span<const uint8_t> candidate,
                                                 uint64_t budget, uint32_t trials,
                                                 uint64_t seed,
                                                 double hashStepCost = 64.0) {
  std::vector<uint64_t> outputs;
  outputs.reserve(trials);
  Machine m;
  uint64_t totalSteps = 0;
  for (uint32_t i = 0; i < trials; ++i) {
    ByteWriter w;
    w.u64(seed);
    w.u32(i);
    EvalContext ctx{Hash256::from(sha256(w.bytes()))};
    ExecResult er = execute_evaluator(evaluator, candidate, ctx, budget, &m);
    outputs.push_back(er.eval_value());
    totalSteps += er.stepsUsed;
  }
  std::sort(outputs.begin(), outputs.end());
  double collidingPairs = 0;
  size_t i = 0;
  while (i < outputs.size()) {
    size_t j = i;
    while (j < outputs.size() && outputs[j] == outputs[i]) ++j;
    double m_v = double(j - i);
    collidingPairs += m_v * (m_v - 1) / 2;
    i = j;
  }
  double totalPairs = double(trials) * (double(trials) - 1) / 2;
  ReuseResistance rr;
  rr.collisionRate = collidingPairs / totalPairs;
  double meanSteps = double(totalSteps) / double(trials);
  rr.threshold = (meanSteps + hashStepCost) / hashStepCost;
  rr.uEstimate = rr.collisionRate > 0 ? 1.0 / rr.collisionRate
                                      : std::numeric_limits<double>::infinity();
  rr.passes = rr.uEstimate > rr.threshold;
  return rr;
}

}  // namespace posearch::vm
