#pragma once

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "posearch/program.hpp"

namespace posearch::asmtool {

struct AsmError : std::runtime_error {
  AsmError(size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  size_t line;
};

namespace detail {

inline const std::map<std::string, Op>& mnemonics() {
  static const std::map<std::string, Op> table = {
      {"PUSH", Op::PUSH}, {"POP", Op::POP},   {"DUP", Op::DUP},
      {"SWAP", Op::SWAP}, {"LOAD", Op::LOAD}, {"STORE", Op::STORE},
      {"ADD", Op::ADD},   {"SUB", Op::SUB},   {"MUL", Op::MUL},
      {"DIV", Op::DIV},   {"MOD", Op::MOD},   {"AND", Op::AND},
      {"OR", Op::OR},     {"XOR", Op::XOR},   {"SHL", Op::SHL},
      {"SHR", Op::SHR},   {"LT", Op::LT},     {"EQ", Op::EQ},
      {"NOT", Op::NOT},   {"JMP", Op::JMP},   {"JZ", Op::JZ},
      {"INPUTLEN", Op::INPUTLEN},             {"RAND", Op::RAND},
      {"EVAL", Op::EVAL}, {"HALT", Op::HALT}};
  return table;
}

inline std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Two-pass assembler for the program text format: one instruction per line,
// `name:` defines a label at the next instruction, `;` and `#` start
// comments. Operands are decimal, 0x-prefixed hex, or label references.
inline Program assemble(const std::string& text) {
  struct Line {
    size_t number;
    std::string mnemonic;
    std::string operand;
  };
  std::map<std::string, uint64_t> labels;
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  size_t lineNo = 0;
  while (std::getline(in, raw)) {
    ++lineNo;
    size_t comment = raw.find_first_of(";#");
    if (comment != std::string::npos) raw = raw.substr(0, comment);
    std::string s = detail::strip(raw);
    while (true) {
      size_t colon = s.find(':');
      if (colon == std::string::npos) break;
      std::string label = detail::strip(s.substr(0, colon));
      if (label.empty() || label.find_first_of(" \t") != std::string::npos)
        throw AsmError(lineNo, "bad label");
      if (labels.count(label)) throw AsmError(lineNo, "duplicate label " + label);
      labels[label] = lines.size();
      s = detail::strip(s.substr(colon + 1));
    }
    if (s.empty()) continue;
    std::istringstream ls(s);
    Line line;
    line.number = lineNo;
    ls >> line.mnemonic;
    ls >> line.operand;
    std::string extra;
    if (ls >> extra) throw AsmError(lineNo, "trailing token " + extra);
    for (char& c : line.mnemonic) c = char(std::toupper(uint8_t(c)));
    lines.push_back(std::move(line));
  }

  Program p;
  for (const Line& line : lines) {
    auto it = detail::mnemonics().find(line.mnemonic);
    if (it == detail::mnemonics().end())
      throw AsmError(line.number, "unknown mnemonic " + line.mnemonic);
    Instruction ins{it->second, 0};
    if (!line.operand.empty()) {
      if (auto lit = labels.find(line.operand); lit != labels.end()) {
        ins.imm = lit->second;
      } else {
        try {
          size_t pos = 0;
          ins.imm = std::stoull(line.operand, &pos, 0);
          if (pos != line.operand.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          throw AsmError(line.number, "bad operand " + line.operand);
        }
      }
    }
    p.instructions.push_back(ins);
  }
  if (auto fault = validate_program(p))
    throw AsmError(lines.empty() ? 0 : lines[fault->index].number, fault->reason);
  return p;
}

}  // namespace posearch::asmtool
