#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posearch/bytes.hpp"

namespace posearch {

// Fixed ISA. Every opcode retires in exactly one step. Arithmetic is 64-bit
// unsigned with wrap-around; DIV/MOD crash on a zero divisor. RAND and EVAL
// are searcher-only.
enum class Op : uint8_t {
  PUSH = 0x01,  // push immediate
  POP = 0x02,
  DUP = 0x03,
  SWAP = 0x04,
  LOAD = 0x05,   // pop addr, push mem[addr]
  STORE = 0x06,  // pop addr, pop value, mem[addr] = value
  ADD = 0x07,
  SUB = 0x08,
  MUL = 0x09,
  DIV = 0x0A,
  MOD = 0x0B,
  AND = 0x0C,
  OR = 0x0D,
  XOR = 0x0E,
  SHL = 0x0F,  // pop count, pop value; count >= 64 yields 0
  SHR = 0x10,
  LT = 0x11,  // pop rhs, pop lhs, push lhs < rhs
  EQ = 0x12,
  NOT = 0x13,  // logical: push top == 0
  JMP = 0x14,  // absolute target in immediate
  JZ = 0x15,   // pop cond, jump when zero
  INPUTLEN = 0x16,
  RAND = 0x17,
  EVAL = 0x18,  // pop candidate byte length, push evaluation value
  HALT = 0x19,
};

inline const char* op_name(Op o) {
  switch (o) {
    case Op::PUSH: return "PUSH";
    case Op::POP: return "POP";
    case Op::DUP: return "DUP";
    case Op::SWAP: return "SWAP";
    case Op::LOAD: return "LOAD";
    case Op::STORE: return "STORE";
    case Op::ADD: return "ADD";
    case Op::SUB: return "SUB";
    case Op::MUL: return "MUL";
    case Op::DIV: return "DIV";
    case Op::MOD: return "MOD";
    case Op::AND: return "AND";
    case Op::OR: return "OR";
    case Op::XOR: return "XOR";
    case Op::SHL: return "SHL";
    case Op::SHR: return "SHR";
    case Op::LT: return "LT";
    case Op::EQ: return "EQ";
    case Op::NOT: return "NOT";
    case Op::JMP: return "JMP";
    case Op::JZ: return "JZ";
    case Op::INPUTLEN: return "INPUTLEN";
    case Op::RAND: return "RAND";
    case Op::EVAL: return "EVAL";
    case Op::HALT: return "HALT";
  }
  return "?";
}

inline bool op_known(uint8_t raw) { return raw >= 0x01 && raw <= 0x19; }

struct Instruction {
  Op op;
  uint64_t imm = 0;

  bool operator==(const Instruction&) const = default;
};

inline constexpr size_t kMaxProgramLen = 65536;

struct Program {
  std::vector<Instruction> instructions;

  bool operator==(const Program&) const = default;

  // Wire format: 32-bit big-endian count, then per instruction one opcode
  // byte and an 8-byte big-endian immediate.
  Bytes to_binary() const {
    ByteWriter w;
    w.u32(uint32_t(instructions.size()));
    for (const Instruction& ins : instructions) {
      w.u8(uint8_t(ins.op));
      w.u64(ins.imm);
    }
    return w.take();
  }

  static Program from_binary(std::span<const uint8_t> bin) {
    ByteReader r(bin);
    uint32_t n = r.u32();
    if (n > kMaxProgramLen) throw EncodingError("program too long");
    Program p;
    p.instructions.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      uint8_t raw = r.u8();
      uint64_t imm = r.u64();
      if (!op_known(raw)) throw EncodingError("unknown opcode at " + std::to_string(i));
      p.instructions.push_back({Op(raw), imm});
    }
    if (!r.done()) throw EncodingError("trailing bytes after program");
    return p;
  }
};

struct ProgramFault {
  size_t index;
  std::string reason;
};

// Accepts iff all opcodes are known and jump targets are in range. A target
// equal to the length lands on the implicit halt past the last instruction.
// When forbidSearcherOps is set, RAND and EVAL are rejected; evaluator
// programs are validated this way at job registration.
inline std::optional<ProgramFault> validate_program(const Program& p,
                                                    bool forbidSearcherOps = false) {
  if (p.instructions.size() > kMaxProgramLen)
    return ProgramFault{0, "program exceeds maximum length"};
  for (size_t i = 0; i < p.instructions.size(); ++i) {
    const Instruction& ins = p.instructions[i];
    if (!op_known(uint8_t(ins.op))) return ProgramFault{i, "unknown opcode"};
    if ((ins.op == Op::JMP || ins.op == Op::JZ) && ins.imm > p.instructions.size())
      return ProgramFault{i, "jump target out of range"};
    if (forbidSearcherOps && (ins.op == Op::RAND || ins.op == Op::EVAL))
      return ProgramFault{i, std::string(op_name(ins.op)) + " not allowed in evaluator"};
  }
  return std::nullopt;
}

}  // namespace posearch
