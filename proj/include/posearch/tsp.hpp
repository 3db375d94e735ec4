#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "posearch/core.hpp"
#include "posearch/rng.hpp"
#include "posearch/vm.hpp"

namespace posearch::tsp {

// Fixed-point geometry: coordinates and distances carry 16 fractional bits.
inline constexpr uint64_t kScale = 1ull << 16;

// Candidates are one city index per byte; 3..12 cities keeps brute-force
// verification tractable.
inline constexpr int kMinCities = 3;
inline constexpr int kMaxCities = 12;

struct City {
  uint64_t x = 0;
  uint64_t y = 0;

  bool operator==(const City&) const = default;
};

// One problem instance. perturbAmplitude is the context-driven coordinate
// error bound: each coordinate moves by at most this many fixed-point units,
// which the builders keep at 2^-16 of the coordinate range. Coordinates must
// leave at least perturbAmplitude of margin to zero and stay below 2^28 so
// squared distances fit in 64 bits.
struct TspInstance {
  std::vector<City> cities;
  uint64_t perturbAmplitude = 1;

  int size() const { return int(cities.size()); }
};

// Random instance inside a square of `sideUnits` whole units.
inline TspInstance make_instance(int cities, uint64_t seed, uint64_t sideUnits = 4096) {
  TspInstance inst;
  uint64_t side = sideUnits * kScale;
  inst.perturbAmplitude = std::max<uint64_t>(1, side >> 16);
  Rng rng(Rng(seed).fork(0x747370u));  // "tsp"
  uint64_t lo = inst.perturbAmplitude;
  uint64_t hi = side - inst.perturbAmplitude;
  for (int i = 0; i < cities; ++i)
    inst.cities.push_back({lo + rng.below(hi - lo), lo + rng.below(hi - lo)});
  return inst;
}

namespace detail {

// Word addresses used by the generated evaluator.
inline constexpr uint64_t kPerturbed = 1100;  // x_i at +2i, y_i at +2i+1
inline constexpr uint64_t kSeen = 1200;
inline constexpr uint64_t kPerm = 1250;
inline constexpr uint64_t kBad = 1300;
inline constexpr uint64_t kTotal = 1301;
inline constexpr uint64_t kMixBase = 1302;
inline constexpr uint64_t kRem = 1310;
inline constexpr uint64_t kRes = 1311;
inline constexpr uint64_t kT0 = 1312;
inline constexpr uint64_t kTc = 1313;
inline constexpr uint64_t kTa = 1314;
inline constexpr uint64_t kTb = 1315;
inline constexpr uint64_t kXa = 1316;
inline constexpr uint64_t kXb = 1317;
inline constexpr uint64_t kLt = 1318;
inline constexpr uint64_t kDx = 1319;
inline constexpr uint64_t kDy = 1320;

class Emitter {
public:
  void op(Op o, uint64_t imm = 0) { out.push_back({o, imm}); }
  void push(uint64_t v) { op(Op::PUSH, v); }
  void load(uint64_t addr) {
    push(addr);
    op(Op::LOAD);
  }
  // Stores the value on top of the stack.
  void store(uint64_t addr) {
    push(addr);
    op(Op::STORE);
  }

  std::vector<Instruction> out;
};

// |mem[a] - mem[b]| without branches, result stored at `dst`.
inline void emit_absdiff(Emitter& e, uint64_t a, uint64_t b, uint64_t dst) {
  e.load(a);
  e.load(b);
  e.op(Op::LT);  // a < b
  e.store(kLt);
  e.load(b);
  e.load(a);
  e.op(Op::SUB);  // b - a
  e.load(kLt);
  e.op(Op::MUL);
  e.load(a);
  e.load(b);
  e.op(Op::SUB);  // a - b
  e.push(1);
  e.load(kLt);
  e.op(Op::SUB);  // 1 - lt
  e.op(Op::MUL);
  e.op(Op::ADD);
  e.store(dst);
}

// Floor square root of mem[kRem] into mem[kRes]; fixed 29 iterations cover
// operands below 2^58, branch-free so the step count never varies.
inline void emit_isqrt(Emitter& e) {
  e.push(0);
  e.store(kRes);
  for (int i = 0; i < 29; ++i) {
    uint64_t bit = 1ull << (56 - 2 * i);
    // t = res + bit
    e.load(kRes);
    e.push(bit);
    e.op(Op::ADD);
    e.store(kT0);
    // c = rem >= t
    e.load(kRem);
    e.load(kT0);
    e.op(Op::LT);
    e.op(Op::NOT);
    e.store(kTc);
    // rem -= t * c
    e.load(kRem);
    e.load(kT0);
    e.load(kTc);
    e.op(Op::MUL);
    e.op(Op::SUB);
    e.store(kRem);
    // res = res/2 + bit * c
    e.load(kRes);
    e.push(1);
    e.op(Op::SHR);
    e.push(bit);
    e.load(kTc);
    e.op(Op::MUL);
    e.op(Op::ADD);
    e.store(kRes);
  }
}

}  // namespace detail

// Builds the evaluator program for one instance. The program is straight
// line (no jumps), so its step count is exactly its instruction count for
// every input. Candidates are either the n-byte visiting order or the order
// followed by an 8-byte salt; the salt widens the nonce space so mining
// never exhausts the permutation set, and it feeds the perturbation so a
// re-salted candidate still costs a fresh evaluation. The program perturbs
// each baked-in coordinate by an offset in [-P, +P] derived from context and
// salt, rejects non-permutation candidates by reporting the worst value, and
// otherwise returns the perturbed fixed-point tour length. An all-zero
// context with no salt yields zero perturbation by construction.
inline Program make_evaluator(const TspInstance& inst) {
  using namespace detail;
  const int n = inst.size();
  const uint64_t P = inst.perturbAmplitude;
  Emitter e;

  // u = ctx0 ^ ctx1 ^ rotl(ctx2, 21) ^ rotl(ctx3, 42) ^ mix(salt);
  // all-zero inputs give u = 0.
  e.load(vm::kCtxBase + 0);
  e.load(vm::kCtxBase + 1);
  e.op(Op::XOR);
  e.load(vm::kCtxBase + 2);
  e.op(Op::DUP);
  e.push(21);
  e.op(Op::SHL);
  e.op(Op::SWAP);
  e.push(43);
  e.op(Op::SHR);
  e.op(Op::OR);
  e.op(Op::XOR);
  e.load(vm::kCtxBase + 3);
  e.op(Op::DUP);
  e.push(42);
  e.op(Op::SHL);
  e.op(Op::SWAP);
  e.push(22);
  e.op(Op::SHR);
  e.op(Op::OR);
  e.op(Op::XOR);
  // Salt: bytes n .. n+7 of the candidate (zero when absent).
  {
    uint64_t word = uint64_t(n) / 8;
    uint64_t r = uint64_t(n) % 8;
    if (r == 0) {
      e.load(vm::kInputBase + word);
    } else {
      e.load(vm::kInputBase + word);
      e.push(8 * r);
      e.op(Op::SHL);
      e.load(vm::kInputBase + word + 1);
      e.push(64 - 8 * r);
      e.op(Op::SHR);
      e.op(Op::OR);
    }
    // murmur3 finalizer keeps zero at zero.
    e.op(Op::DUP);
    e.push(33);
    e.op(Op::SHR);
    e.op(Op::XOR);
    e.push(0xff51afd7ed558ccdull);
    e.op(Op::MUL);
    e.op(Op::DUP);
    e.push(29);
    e.op(Op::SHR);
    e.op(Op::XOR);
    e.push(0xc4ceb9fe1a85ec53ull);
    e.op(Op::MUL);
    e.op(Op::DUP);
    e.push(32);
    e.op(Op::SHR);
    e.op(Op::XOR);
    e.op(Op::XOR);
  }
  e.store(kMixBase);

  // Perturbed coordinates: coord + (mix(u * (2k+1)) mod (2P+1)) - P, with
  // the symmetric remainder so u == 0 gives exactly the base coordinates.
  for (int k = 0; k < 2 * n; ++k) {
    uint64_t base = (k % 2 == 0) ? inst.cities[k / 2].x : inst.cities[k / 2].y;
    e.load(kMixBase);
    e.push(uint64_t(2 * k + 1));
    e.op(Op::MUL);
    // murmur3 finalizer; maps 0 to 0.
    e.op(Op::DUP);
    e.push(33);
    e.op(Op::SHR);
    e.op(Op::XOR);
    e.push(0xff51afd7ed558ccdull);
    e.op(Op::MUL);
    e.op(Op::DUP);
    e.push(29);
    e.op(Op::SHR);
    e.op(Op::XOR);
    e.push(0xc4ceb9fe1a85ec53ull);
    e.op(Op::MUL);
    e.op(Op::DUP);
    e.push(32);
    e.op(Op::SHR);
    e.op(Op::XOR);
    // r = m mod (2P+1); delta = r - (2P+1) * (r > P)
    e.push(2 * P + 1);
    e.op(Op::MOD);
    e.op(Op::DUP);
    e.push(P);
    e.op(Op::SWAP);
    e.op(Op::LT);  // P < r
    e.push(2 * P + 1);
    e.op(Op::MUL);
    e.op(Op::SUB);
    e.push(base);
    e.op(Op::ADD);
    e.store(kPerturbed + uint64_t(k));
  }

  // Candidate length must be n (bare order) or n + 8 (salted).
  e.op(Op::INPUTLEN);
  e.push(uint64_t(n));
  e.op(Op::EQ);
  e.op(Op::INPUTLEN);
  e.push(uint64_t(n) + 8);
  e.op(Op::EQ);
  e.op(Op::OR);
  e.op(Op::NOT);
  e.load(kBad);
  e.op(Op::OR);
  e.store(kBad);

  // Permutation check; stores clamped indices for the distance pass.
  for (int j = 0; j < n; ++j) {
    e.load(vm::kInputBase + uint64_t(j / 8));
    e.push(uint64_t(56 - 8 * (j % 8)));
    e.op(Op::SHR);
    e.push(0xFF);
    e.op(Op::AND);  // idx
    e.op(Op::DUP);
    e.push(uint64_t(n));
    e.op(Op::LT);  // inRange
    e.op(Op::DUP);
    e.op(Op::NOT);
    e.load(kBad);
    e.op(Op::OR);
    e.store(kBad);
    e.op(Op::MUL);  // safe = idx * inRange
    e.op(Op::DUP);
    e.store(kPerm + uint64_t(j));
    e.push(kSeen);
    e.op(Op::ADD);  // seen slot address
    e.op(Op::DUP);
    e.op(Op::LOAD);
    e.load(kBad);
    e.op(Op::OR);
    e.store(kBad);
    e.push(1);
    e.op(Op::SWAP);
    e.op(Op::STORE);
  }

  // Tour length over the cycle.
  for (int j = 0; j < n; ++j) {
    int jn = (j + 1) % n;
    e.load(kPerm + uint64_t(j));
    e.push(2);
    e.op(Op::MUL);
    e.push(kPerturbed);
    e.op(Op::ADD);
    e.store(kTa);
    e.load(kPerm + uint64_t(jn));
    e.push(2);
    e.op(Op::MUL);
    e.push(kPerturbed);
    e.op(Op::ADD);
    e.store(kTb);
    // xa = mem[mem[kTa]], xb = mem[mem[kTb]]
    e.load(kTa);
    e.op(Op::LOAD);
    e.store(kXa);
    e.load(kTb);
    e.op(Op::LOAD);
    e.store(kXb);
    emit_absdiff(e, kXa, kXb, kDx);
    // ya, yb at address + 1
    e.load(kTa);
    e.push(1);
    e.op(Op::ADD);
    e.op(Op::LOAD);
    e.store(kXa);
    e.load(kTb);
    e.push(1);
    e.op(Op::ADD);
    e.op(Op::LOAD);
    e.store(kXb);
    emit_absdiff(e, kXa, kXb, kDy);
    // rem = dx*dx + dy*dy
    e.load(kDx);
    e.op(Op::DUP);
    e.op(Op::MUL);
    e.load(kDy);
    e.op(Op::DUP);
    e.op(Op::MUL);
    e.op(Op::ADD);
    e.store(kRem);
    emit_isqrt(e);
    e.load(kTotal);
    e.load(kRes);
    e.op(Op::ADD);
    e.store(kTotal);
  }

  // value = total * (1 - bad) + WORST * bad
  e.load(kTotal);
  e.push(1);
  e.load(kBad);
  e.op(Op::SUB);
  e.op(Op::MUL);
  e.push(kWorstEval);
  e.load(kBad);
  e.op(Op::MUL);
  e.op(Op::ADD);
  e.op(Op::HALT);
  return Program{std::move(e.out)};
}

// Random-search searcher: draws a fresh random permutation with
// Fisher-Yates, appends a random 8-byte salt, and evaluates, forever. The
// salt keeps the nonce stream unbounded even though the permutation space
// is finite. The host harvests every evaluation through the EVAL hook.
inline Program make_searcher(int n) {
  using namespace detail;
  const uint64_t arr = 100;      // permutation scratch
  const uint64_t saltTmp = 99;
  Emitter e;
  for (int i = 0; i < n; ++i) {
    e.push(uint64_t(i));
    e.store(arr + uint64_t(i));
  }
  size_t loopStart = e.out.size();
  for (int i = n - 1; i >= 1; --i) {
    // j = rand % (i+1); swap arr[i], arr[j]
    e.op(Op::RAND);
    e.push(uint64_t(i + 1));
    e.op(Op::MOD);
    e.push(arr);
    e.op(Op::ADD);  // jaddr
    e.op(Op::DUP);
    e.op(Op::LOAD);  // jaddr, vj
    e.load(arr + uint64_t(i));  // jaddr, vj, vi
    e.op(Op::SWAP);  // jaddr, vi, vj
    e.store(arr + uint64_t(i));  // jaddr, vi
    e.op(Op::SWAP);  // vi, jaddr
    e.op(Op::STORE);
  }
  // Pack one byte per city into the input words.
  for (int w = 0; w * 8 < n; ++w) {
    e.push(0);
    for (int b = 0; b < 8 && w * 8 + b < n; ++b) {
      e.load(arr + uint64_t(w * 8 + b));
      e.push(uint64_t(56 - 8 * b));
      e.op(Op::SHL);
      e.op(Op::OR);
    }
    e.store(vm::kInputBase + uint64_t(w));
  }
  // Salt bytes n .. n+7.
  {
    uint64_t word = uint64_t(n) / 8;
    uint64_t r = uint64_t(n) % 8;
    e.op(Op::RAND);
    e.store(saltTmp);
    if (r == 0) {
      e.load(saltTmp);
      e.store(vm::kInputBase + word);
    } else {
      e.load(vm::kInputBase + word);
      e.load(saltTmp);
      e.push(8 * r);
      e.op(Op::SHR);
      e.op(Op::OR);
      e.store(vm::kInputBase + word);
      e.load(saltTmp);
      e.push(64 - 8 * r);
      e.op(Op::SHL);
      e.store(vm::kInputBase + word + 1);
    }
  }
  e.push(uint64_t(n) + 8);
  e.op(Op::EVAL);
  e.op(Op::POP);
  e.op(Op::JMP, loopStart);
  return Program{std::move(e.out)};
}

// Visiting order prefix of a candidate (drops any salt suffix).
inline Bytes tour_of_candidate(std::span<const uint8_t> candidate, int n) {
  size_t len = std::min(candidate.size(), size_t(n));
  return Bytes(candidate.begin(), candidate.begin() + len);
}

inline Job make_job(NodeId client, Amount charge, const TspInstance& inst) {
  ProgramPair p{make_evaluator(inst), make_searcher(inst.size())};
  uint64_t budget = p.evaluator.instructions.size() + 8;
  return Job::make(client, charge, budget, std::move(p));
}

// --- independent oracle ------------------------------------------------------
//
// Brute-force checker sharing no arithmetic with the generated bytecode: the
// square root is Newton-corrected from a floating-point seed instead of the
// VM's shift-and-subtract loop.
namespace oracle {

inline uint64_t isqrt(uint64_t s) {
  uint64_t r = uint64_t(std::sqrt(double(s)));
  while (r > 0 && r * r > s) --r;
  while ((r + 1) * (r + 1) <= s) ++r;
  return r;
}

inline uint64_t distance(const City& a, const City& b) {
  uint64_t dx = a.x > b.x ? a.x - b.x : b.x - a.x;
  uint64_t dy = a.y > b.y ? a.y - b.y : b.y - a.y;
  return isqrt(dx * dx + dy * dy);
}

// Unperturbed tour length for a visiting order.
inline uint64_t tour_length(const TspInstance& inst, std::span<const uint8_t> perm) {
  uint64_t total = 0;
  int n = inst.size();
  for (int j = 0; j < n; ++j)
    total += distance(inst.cities[perm[j]], inst.cities[perm[(j + 1) % n]]);
  return total;
}

struct Optimum {
  Bytes tour;
  uint64_t length = 0;
};

// Exhaustive search with city 0 pinned; feasible for the bounded sizes.
inline Optimum optimal_tour(const TspInstance& inst) {
  int n = inst.size();
  Bytes perm(n);
  std::iota(perm.begin(), perm.end(), uint8_t(0));
  Optimum best{perm, tour_length(inst, perm)};
  std::vector<uint8_t> rest(perm.begin() + 1, perm.end());
  do {
    std::copy(rest.begin(), rest.end(), perm.begin() + 1);
    uint64_t len = tour_length(inst, perm);
    if (len < best.length) best = {perm, len};
  } while (std::next_permutation(rest.begin(), rest.end()));
  return best;
}

}  // namespace oracle

}  // namespace posearch::tsp
