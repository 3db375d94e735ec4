#include "posearch/vm.hpp"

#include <gtest/gtest.h>

#include "posearch/rng.hpp"

using namespace posearch;
using namespace posearch::vm;

namespace {

Program prog(std::initializer_list<Instruction> ins) {
  return Program{std::vector<Instruction>(ins)};
}

EvalContext zero_ctx() { return EvalContext{Hash256::zero()}; }

TEST(Validate, EmptyProgramOk) {
  EXPECT_FALSE(validate_program(Program{}).has_value());
}

TEST(Validate, JumpOutOfRange) {
  Program p = prog({{Op::PUSH, 1}, {Op::JMP, 1000000000}});
  auto fault = validate_program(p);
  ASSERT_TRUE(fault.has_value());
  EXPECT_EQ(fault->index, 1u);
}

TEST(Validate, EvaluatorRejectsSearcherOps) {
  EXPECT_TRUE(validate_program(prog({{Op::RAND, 0}, {Op::HALT, 0}}), true).has_value());
  EXPECT_TRUE(validate_program(prog({{Op::EVAL, 0}, {Op::HALT, 0}}), true).has_value());
  EXPECT_FALSE(validate_program(prog({{Op::PUSH, 1}, {Op::HALT, 0}}), true).has_value());
}

TEST(Execute, PushHalt) {
  ExecResult r = execute_evaluator(prog({{Op::PUSH, 0}, {Op::HALT, 0}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::value);
  EXPECT_EQ(r.value, 0u);
  EXPECT_EQ(r.stepsUsed, 2u);
}

TEST(Execute, DivByZeroCrashes) {
  ExecResult r = execute_evaluator(
      prog({{Op::PUSH, 1}, {Op::PUSH, 0}, {Op::DIV, 0}, {Op::HALT, 0}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::crashed);
  EXPECT_EQ(r.reason, CrashReason::division_by_zero);
  EXPECT_EQ(r.stepsUsed, 3u);
  EXPECT_EQ(r.eval_value(), kWorstEval);
}

TEST(Execute, StackUnderflow) {
  ExecResult r = execute_evaluator(prog({{Op::POP, 0}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::crashed);
  EXPECT_EQ(r.reason, CrashReason::stack_underflow);
}

TEST(Execute, MemoryOutOfBounds) {
  ExecResult r = execute_evaluator(
      prog({{Op::PUSH, 70000}, {Op::LOAD, 0}, {Op::HALT, 0}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::crashed);
  EXPECT_EQ(r.reason, CrashReason::memory_out_of_bounds);
}

TEST(Execute, RandForbiddenInEvaluator) {
  ExecResult r = execute_evaluator(prog({{Op::RAND, 0}, {Op::HALT, 0}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::crashed);
  EXPECT_EQ(r.reason, CrashReason::illegal_opcode);
}

TEST(Execute, BudgetExhaustionIsExact) {
  // Straight-line program of k instructions: budget b < k stops with
  // stepsUsed == b, budget >= k reports exactly k.
  std::vector<Instruction> ins;
  for (int i = 0; i < 10; ++i) ins.push_back({Op::PUSH, uint64_t(i)});
  ins.push_back({Op::HALT, 0});
  Program p{ins};
  ExecResult full = execute_evaluator(p, {}, zero_ctx(), 100);
  EXPECT_EQ(full.outcome, ExecResult::Outcome::value);
  EXPECT_EQ(full.stepsUsed, 11u);
  for (uint64_t b = 1; b < 11; ++b) {
    ExecResult r = execute_evaluator(p, {}, zero_ctx(), b);
    EXPECT_EQ(r.outcome, ExecResult::Outcome::out_of_steps);
    EXPECT_EQ(r.stepsUsed, b);
    EXPECT_EQ(r.eval_value(), kWorstEval);
  }
}

TEST(Execute, CandidateAndInputLen) {
  // Reads word 0 of the input region and the input length.
  Bytes candidate = {0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09};
  Program p = prog({{Op::INPUTLEN, 0},
                    {Op::PUSH, kInputBase},
                    {Op::LOAD, 0},
                    {Op::ADD, 0},
                    {Op::HALT, 0}});
  ExecResult r = execute_evaluator(p, candidate, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::value);
  EXPECT_EQ(r.value, 0x0102030405060708ull + 9);
}

TEST(Execute, SecondInputWordPadsWithZeros) {
  Bytes candidate = {0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09};
  Program p = prog({{Op::PUSH, kInputBase + 1}, {Op::LOAD, 0}, {Op::HALT, 0}});
  ExecResult r = execute_evaluator(p, candidate, zero_ctx(), 100);
  EXPECT_EQ(r.value, 0x0900000000000000ull);
}

TEST(Execute, CtxWordsVisible) {
  EvalContext ctx;
  for (int i = 0; i < 32; ++i) ctx.ctx.bytes[i] = uint8_t(i);
  Program p = prog({{Op::PUSH, kCtxBase + 3}, {Op::LOAD, 0}, {Op::HALT, 0}});
  ExecResult r = execute_evaluator(p, {}, ctx, 100);
  EXPECT_EQ(r.value, 0x18191a1b1c1d1e1full);
}

TEST(Execute, DeterministicTwice) {
  Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Instruction> ins;
    uint32_t n = uint32_t(rng.below(40)) + 1;
    for (uint32_t i = 0; i < n; ++i) {
      Op op = Op(uint8_t(rng.below(0x19)) + 1);
      if (op == Op::RAND || op == Op::EVAL) op = Op::PUSH;
      uint64_t imm = rng.below(64);
      if (op == Op::JMP || op == Op::JZ) imm = rng.below(n + 1);
      ins.push_back({op, imm});
    }
    Program p{ins};
    Bytes candidate(rng.below(16));
    for (uint8_t& b : candidate) b = uint8_t(rng.next());
    ExecResult a = execute_evaluator(p, candidate, zero_ctx(), 500);
    ExecResult b = execute_evaluator(p, candidate, zero_ctx(), 500);
    EXPECT_EQ(a, b);
  }
}

TEST(Execute, FallingOffEndIsImplicitHalt) {
  ExecResult r = execute_evaluator(prog({{Op::PUSH, 42}}), {}, zero_ctx(), 100);
  EXPECT_EQ(r.outcome, ExecResult::Outcome::value);
  EXPECT_EQ(r.value, 42u);
  EXPECT_EQ(r.stepsUsed, 1u);
}

TEST(Searcher, ImmediateHaltMakesNoEvals) {
  Program searcher = prog({{Op::HALT, 0}});
  Program evaluator = prog({{Op::PUSH, 0}, {Op::HALT, 0}});
  SearchOutcome out = run_searcher(searcher, evaluator, zero_ctx(), 100, 1000, 1,
                                   [](std::span<const uint8_t>, uint64_t) {
                                     return OnEval::cont;
                                   });
  EXPECT_EQ(out.evalCount, 0u);
  EXPECT_FALSE(out.bestCandidate.has_value());
  EXPECT_FALSE(out.crashed);
}

TEST(Searcher, StopAfterFirstEval) {
  // value := rand; mem[0] := value; eval 8 bytes; discard; loop.
  Program searcher = prog({{Op::RAND, 0},
                           {Op::PUSH, 0},
                           {Op::STORE, 0},
                           {Op::PUSH, 8},
                           {Op::EVAL, 0},
                           {Op::POP, 0},
                           {Op::JMP, 0}});
  Program evaluator = prog({{Op::PUSH, 7}, {Op::HALT, 0}});
  int calls = 0;
  SearchOutcome out = run_searcher(searcher, evaluator, zero_ctx(), 100, 1 << 20, 1,
                                   [&](std::span<const uint8_t> c, uint64_t v) {
                                     ++calls;
                                     EXPECT_EQ(c.size(), 8u);
                                     EXPECT_EQ(v, 7u);
                                     return OnEval::stop;
                                   });
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(out.evalCount, 1u);
  EXPECT_EQ(out.bestValue, 7u);
}

TEST(Searcher, CrashReported) {
  Program searcher = prog({{Op::POP, 0}});
  Program evaluator = prog({{Op::PUSH, 0}, {Op::HALT, 0}});
  SearchOutcome out = run_searcher(searcher, evaluator, zero_ctx(), 100, 1000, 1,
                                   [](std::span<const uint8_t>, uint64_t) {
                                     return OnEval::cont;
                                   });
  EXPECT_TRUE(out.crashed);
  EXPECT_EQ(out.evalCount, 0u);
}

TEST(Searcher, BestTracksMinimum) {
  // Evaluator returns the first candidate byte; searcher tries bytes from RAND.
  Program searcher = prog({{Op::RAND, 0},
                           {Op::PUSH, 0},
                           {Op::STORE, 0},
                           {Op::PUSH, 1},
                           {Op::EVAL, 0},
                           {Op::POP, 0},
                           {Op::JMP, 0}});
  Program evaluator = prog({{Op::PUSH, kInputBase},
                            {Op::LOAD, 0},
                            {Op::PUSH, 56},
                            {Op::SHR, 0},
                            {Op::HALT, 0}});
  uint64_t seen = 0;
  SearchOutcome out = run_searcher(searcher, evaluator, zero_ctx(), 100, 1 << 16, 42,
                                   [&](std::span<const uint8_t>, uint64_t) {
                                     return ++seen >= 200 ? OnEval::stop : OnEval::cont;
                                   });
  EXPECT_EQ(out.evalCount, 200u);
  uint64_t best = kWorstEval;
  // Replay the same candidate stream to confirm the tracked minimum.
  Rng replay(42);
  for (int i = 0; i < 200; ++i) best = std::min(best, replay.next() >> 56);
  EXPECT_EQ(out.bestValue, best);
}

TEST(Searcher, RandDeterministicPerSeed) {
  Program searcher = prog({{Op::RAND, 0},
                           {Op::PUSH, 0},
                           {Op::STORE, 0},
                           {Op::PUSH, 8},
                           {Op::EVAL, 0},
                           {Op::POP, 0},
                           {Op::JMP, 0}});
  Program evaluator = prog({{Op::PUSH, kInputBase}, {Op::LOAD, 0}, {Op::HALT, 0}});
  auto collect = [&](uint64_t seed) {
    std::vector<uint64_t> vals;
    run_searcher(searcher, evaluator, zero_ctx(), 100, 1 << 16, seed,
                 [&](std::span<const uint8_t>, uint64_t v) {
                   vals.push_back(v);
                   return vals.size() >= 20 ? OnEval::stop : OnEval::cont;
                 });
    return vals;
  };
  EXPECT_EQ(collect(5), collect(5));
  EXPECT_NE(collect(5), collect(6));
}

TEST(Measure, TwoStepEvaluator) {
  Program p = prog({{Op::PUSH, 0}, {Op::HALT, 0}});
  EXPECT_DOUBLE_EQ(measure_eval_steps(p, 100, 16, 1), 2.0);
  EXPECT_DOUBLE_EQ(measure_eval_steps(p, 100, 16, 1), measure_eval_steps(p, 100, 16, 1));
}

TEST(ReuseResistance, ConstantEvaluatorFails) {
  Program constant = prog({{Op::PUSH, 5}, {Op::HALT, 0}});
  Bytes candidate = {1, 2, 3};
  ReuseResistance rr = estimate_reuse_resistance(constant, candidate, 100, 200, 9);
  EXPECT_DOUBLE_EQ(rr.collisionRate, 1.0);
  EXPECT_FALSE(rr.passes);
}

TEST(ReuseResistance, CtxEchoPasses) {
  // Returns the low 64 bits of ctx: distinct contexts give distinct outputs.
  Program echo = prog({{Op::PUSH, kCtxBase + 3}, {Op::LOAD, 0}, {Op::HALT, 0}});
  Bytes candidate = {1};
  ReuseResistance rr = estimate_reuse_resistance(echo, candidate, 100, 10000, 9);
  EXPECT_DOUBLE_EQ(rr.collisionRate, 0.0);
  EXPECT_TRUE(rr.passes);
}

}  // namespace
