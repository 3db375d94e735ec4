#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posearch/bytes.hpp"
#include "posearch/program.hpp"
#include "posearch/sha256.hpp"
#include "posearch/types.hpp"

namespace posearch {

// Canonical encoding layout
// -------------------------
// Every chain object encodes as: one domain-separation tag byte, then each
// field in declared order as a 32-bit big-endian length prefix followed by
// the payload bytes. Integer payloads are big-endian fixed width; list
// payloads are a 32-bit count followed by the concatenated elements.
// Nested objects appear as their own full encoding inside the enclosing
// field or list element.
//
// Hash preimages equal the canonical encoding for every type except Job and
// Block: there, program bodies are represented by programsHash alone so a
// compacted chain hashes identically to the original. Nonce candidates stay
// in the Miniblock preimage; that hash is the mining target and compaction
// never needs to recompute it.
enum class Tag : uint8_t {
  job = 0x01,
  nonce = 0x02,
  miniblock = 0x03,
  block = 0x04,
  commit = 0x05,
  reveal = 0x06,
  transaction = 0x07,
  program_pair = 0x08,
  eval_context = 0x09,
  chain_params = 0x0A,
};

struct ProgramPair {
  Program evaluator;
  Program searcher;

  bool operator==(const ProgramPair&) const = default;
};

inline Hash256 programs_hash(const ProgramPair& p) {
  ByteWriter w;
  w.u8(uint8_t(Tag::program_pair));
  Bytes e = p.evaluator.to_binary();
  Bytes s = p.searcher.to_binary();
  w.field(e);
  w.field(s);
  return Hash256::from(sha256(w.bytes()));
}

// An optimization search request. jobId is derived: the content hash of all
// other fields, with the two programs represented by programsHash. Bodies
// may be absent on compacted chains.
struct Job {
  NodeId clientId;
  Amount charge;
  uint64_t evalStepBudget = 0;
  bool isEmpty = false;
  Hash256 programsHash;
  std::optional<ProgramPair> bodies;

  static Job make(NodeId client, Amount charge, uint64_t evalStepBudget,
                  ProgramPair programs, bool isEmpty = false) {
    Job j;
    j.clientId = client;
    j.charge = charge;
    j.evalStepBudget = evalStepBudget;
    j.isEmpty = isEmpty;
    j.programsHash = programs_hash(programs);
    j.bodies = std::move(programs);
    return j;
  }

  const Program& evaluator() const { return bodies->evaluator; }
  const Program& searcher() const { return bodies->searcher; }
  bool has_bodies() const { return bodies.has_value(); }

  Job without_bodies() const {
    Job j = *this;
    j.bodies.reset();
    return j;
  }

  bool operator==(const Job&) const = default;
};

// Solution candidate plus its evaluation value. The candidate is dropped by
// compaction; evaluation values are kept.
struct Nonce {
  std::optional<Bytes> candidate;
  uint64_t evalValue = 0;

  bool operator==(const Nonce&) const = default;
};

struct Miniblock {
  Hash256 prevBlockHash;
  uint16_t jobSlot = 0;
  NodeId minerId;
  Nonce nonce;

  bool operator==(const Miniblock&) const = default;
};

struct Commit {
  Hash256 jobId;
  NodeId minerId;
  uint64_t evalValue = 0;
  Hash256 solutionHash;

  bool operator==(const Commit&) const = default;
};

struct Reveal {
  Hash256 jobId;
  NodeId minerId;
  Bytes solution;

  bool operator==(const Reveal&) const = default;
};

struct Transaction {
  NodeId from;
  NodeId to;
  Amount amount;

  bool operator==(const Transaction&) const = default;
};

struct ScheduleEntry {
  Hash256 jobId;
  uint16_t zeroBits = 0;

  bool operator==(const ScheduleEntry&) const = default;
};

enum class PayoutReason : uint8_t {
  endowment = 0,         // genesis only
  miniblock_reward = 1,  // minted, split across the interval's miniblocks
  job_payment = 2,       // escrow released to the winning node(s)
  job_refund = 3,        // escrow returned to the client
};

struct PayoutEntry {
  NodeId node;
  Amount amount;
  PayoutReason reason = PayoutReason::miniblock_reward;
  Hash256 jobId;  // zero for minted payouts

  bool operator==(const PayoutEntry&) const = default;
};

struct Block {
  Hash256 prevBlockHash;
  uint64_t height = 0;
  uint64_t timestamp = 0;  // simulation micro-ticks
  std::vector<Hash256> miniblockHashes;  // one per parent schedule slot
  std::vector<Transaction> transactions;
  std::vector<Job> newJobs;
  std::vector<ScheduleEntry> scheduledJobs;  // to execute next interval
  std::vector<Commit> commits;
  std::vector<Reveal> reveals;
  std::vector<PayoutEntry> payouts;

  bool operator==(const Block&) const = default;
};

namespace detail {

inline void put_hash(ByteWriter& w, const Hash256& h) { w.field(h.bytes); }
inline void put_node(ByteWriter& w, const NodeId& n) { w.field(n.id); }

inline Hash256 get_hash(ByteReader& r) {
  Bytes b = r.field();
  if (b.size() != 32) throw EncodingError("expected 32-byte hash field");
  Hash256 h;
  std::copy(b.begin(), b.end(), h.bytes.begin());
  return h;
}

inline NodeId get_node(ByteReader& r) {
  Bytes b = r.field();
  if (b.size() != 8) throw EncodingError("expected 8-byte id field");
  NodeId n;
  std::copy(b.begin(), b.end(), n.id.begin());
  return n;
}

inline void encode_nonce(ByteWriter& w, const Nonce& n, bool forHash) {
  w.u8(uint8_t(Tag::nonce));
  if (forHash) {
    if (!n.candidate) throw EncodingError("cannot hash a compacted nonce");
    w.field(*n.candidate);
  } else {
    ByteWriter sect;
    if (n.candidate) {
      sect.u8(1);
      sect.raw(*n.candidate);
    }
    w.field(sect.bytes());
  }
  w.field_u64(n.evalValue);
}

inline Nonce decode_nonce(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::nonce)) throw EncodingError("expected nonce tag");
  Bytes sect = r.field();
  Nonce n;
  if (!sect.empty()) {
    if (sect[0] != 1) throw EncodingError("bad candidate presence flag");
    n.candidate = Bytes(sect.begin() + 1, sect.end());
    if (n.candidate->size() > 4096) throw EncodingError("candidate too long");
  }
  n.evalValue = r.field_u64();
  return n;
}

inline void encode_miniblock(ByteWriter& w, const Miniblock& m, bool forHash) {
  w.u8(uint8_t(Tag::miniblock));
  put_hash(w, m.prevBlockHash);
  w.field_u16(m.jobSlot);
  put_node(w, m.minerId);
  ByteWriter nw;
  encode_nonce(nw, m.nonce, forHash);
  w.field(nw.bytes());
}

inline Miniblock decode_miniblock(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::miniblock)) throw EncodingError("expected miniblock tag");
  Miniblock m;
  m.prevBlockHash = get_hash(r);
  m.jobSlot = r.field_u16();
  m.minerId = get_node(r);
  Bytes nb = r.field();
  ByteReader nr(nb);
  m.nonce = decode_nonce(nr);
  if (!nr.done()) throw EncodingError("trailing bytes in nonce");
  return m;
}

inline void encode_job(ByteWriter& w, const Job& j, bool forHash) {
  w.u8(uint8_t(Tag::job));
  put_node(w, j.clientId);
  w.field_u64(j.charge.coins);
  w.field_u64(j.evalStepBudget);
  w.field_u8(j.isEmpty ? 1 : 0);
  put_hash(w, j.programsHash);
  if (!forHash) {
    ByteWriter sect;
    if (j.bodies) {
      Bytes e = j.bodies->evaluator.to_binary();
      Bytes s = j.bodies->searcher.to_binary();
      sect.field(e);
      sect.field(s);
    }
    w.field(sect.bytes());
  }
}

inline Job decode_job(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::job)) throw EncodingError("expected job tag");
  Job j;
  j.clientId = get_node(r);
  j.charge = Amount{r.field_u64()};
  j.evalStepBudget = r.field_u64();
  j.isEmpty = r.field_u8() != 0;
  j.programsHash = get_hash(r);
  Bytes sect = r.field();
  if (!sect.empty()) {
    ByteReader sr(sect);
    ProgramPair p;
    p.evaluator = Program::from_binary(sr.field());
    p.searcher = Program::from_binary(sr.field());
    if (!sr.done()) throw EncodingError("trailing bytes in job bodies");
    if (programs_hash(p) != j.programsHash)
      throw EncodingError("job bodies do not match programsHash");
    j.bodies = std::move(p);
  }
  return j;
}

inline void encode_commit(ByteWriter& w, const Commit& c) {
  w.u8(uint8_t(Tag::commit));
  put_hash(w, c.jobId);
  put_node(w, c.minerId);
  w.field_u64(c.evalValue);
  put_hash(w, c.solutionHash);
}

inline Commit decode_commit(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::commit)) throw EncodingError("expected commit tag");
  Commit c;
  c.jobId = get_hash(r);
  c.minerId = get_node(r);
  c.evalValue = r.field_u64();
  c.solutionHash = get_hash(r);
  return c;
}

inline void encode_reveal(ByteWriter& w, const Reveal& v) {
  w.u8(uint8_t(Tag::reveal));
  put_hash(w, v.jobId);
  put_node(w, v.minerId);
  w.field(v.solution);
}

inline Reveal decode_reveal(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::reveal)) throw EncodingError("expected reveal tag");
  Reveal v;
  v.jobId = get_hash(r);
  v.minerId = get_node(r);
  v.solution = r.field();
  return v;
}

inline void encode_transaction(ByteWriter& w, const Transaction& t) {
  w.u8(uint8_t(Tag::transaction));
  put_node(w, t.from);
  put_node(w, t.to);
  w.field_u64(t.amount.coins);
}

inline Transaction decode_transaction(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::transaction)) throw EncodingError("expected transaction tag");
  Transaction t;
  t.from = get_node(r);
  t.to = get_node(r);
  t.amount = Amount{r.field_u64()};
  return t;
}

inline void encode_block(ByteWriter& w, const Block& b, bool forHash) {
  w.u8(uint8_t(Tag::block));
  put_hash(w, b.prevBlockHash);
  w.field_u64(b.height);
  w.field_u64(b.timestamp);
  {
    ByteWriter l;
    l.u32(uint32_t(b.miniblockHashes.size()));
    for (const Hash256& h : b.miniblockHashes) l.raw(h.bytes);
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.transactions.size()));
    for (const Transaction& t : b.transactions) encode_transaction(l, t);
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.newJobs.size()));
    for (const Job& j : b.newJobs) encode_job(l, j, forHash);
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.scheduledJobs.size()));
    for (const ScheduleEntry& s : b.scheduledJobs) {
      l.raw(s.jobId.bytes);
      l.u16(s.zeroBits);
    }
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.commits.size()));
    for (const Commit& c : b.commits) encode_commit(l, c);
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.reveals.size()));
    for (const Reveal& v : b.reveals) encode_reveal(l, v);
    w.field(l.bytes());
  }
  {
    ByteWriter l;
    l.u32(uint32_t(b.payouts.size()));
    for (const PayoutEntry& p : b.payouts) {
      l.raw(p.node.id);
      l.u64(p.amount.coins);
      l.u8(uint8_t(p.reason));
      l.raw(p.jobId.bytes);
    }
    w.field(l.bytes());
  }
}

inline Block decode_block(ByteReader& r) {
  if (r.u8() != uint8_t(Tag::block)) throw EncodingError("expected block tag");
  Block b;
  b.prevBlockHash = get_hash(r);
  b.height = r.field_u64();
  b.timestamp = r.field_u64();
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    b.miniblockHashes.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      Bytes hb = l.raw(32);
      Hash256 h;
      std::copy(hb.begin(), hb.end(), h.bytes.begin());
      b.miniblockHashes.push_back(h);
    }
    if (!l.done()) throw EncodingError("trailing bytes in hash list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) b.transactions.push_back(decode_transaction(l));
    if (!l.done()) throw EncodingError("trailing bytes in transaction list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) b.newJobs.push_back(decode_job(l));
    if (!l.done()) throw EncodingError("trailing bytes in job list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) {
      ScheduleEntry s;
      Bytes hb = l.raw(32);
      std::copy(hb.begin(), hb.end(), s.jobId.bytes.begin());
      s.zeroBits = l.u16();
      b.scheduledJobs.push_back(s);
    }
    if (!l.done()) throw EncodingError("trailing bytes in schedule list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) b.commits.push_back(decode_commit(l));
    if (!l.done()) throw EncodingError("trailing bytes in commit list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) b.reveals.push_back(decode_reveal(l));
    if (!l.done()) throw EncodingError("trailing bytes in reveal list");
  }
  {
    Bytes buf = r.field();
    ByteReader l(buf);
    uint32_t n = l.u32();
    for (uint32_t i = 0; i < n; ++i) {
      PayoutEntry p;
      Bytes nb = l.raw(8);
      std::copy(nb.begin(), nb.end(), p.node.id.begin());
      p.amount = Amount{l.u64()};
      uint8_t reason = l.u8();
      if (reason > 3) throw EncodingError("unknown payout reason");
      p.reason = PayoutReason(reason);
      Bytes jb = l.raw(32);
      std::copy(jb.begin(), jb.end(), p.jobId.bytes.begin());
      b.payouts.push_back(p);
    }
    if (!l.done()) throw EncodingError("trailing bytes in payout list");
  }
  return b;
}

}  // namespace detail

// --- canonical encode / decode -------------------------------------------

inline Bytes canonical_encode(const Nonce& n) {
  ByteWriter w;
  detail::encode_nonce(w, n, false);
  return w.take();
}

inline Bytes canonical_encode(const Miniblock& m) {
  ByteWriter w;
  detail::encode_miniblock(w, m, false);
  return w.take();
}

inline Bytes canonical_encode(const Job& j) {
  ByteWriter w;
  detail::encode_job(w, j, false);
  return w.take();
}

inline Bytes canonical_encode(const Commit& c) {
  ByteWriter w;
  detail::encode_commit(w, c);
  return w.take();
}

inline Bytes canonical_encode(const Reveal& v) {
  ByteWriter w;
  detail::encode_reveal(w, v);
  return w.take();
}

inline Bytes canonical_encode(const Transaction& t) {
  ByteWriter w;
  detail::encode_transaction(w, t);
  return w.take();
}

inline Bytes canonical_encode(const Block& b) {
  ByteWriter w;
  detail::encode_block(w, b, false);
  return w.take();
}

// --- hashing ---------------------------------------------------------------

inline Hash256 hash_bytes(std::span<const uint8_t> b) {
  return Hash256::from(sha256(b));
}

inline Hash256 hash_object(const Nonce& n) {
  ByteWriter w;
  detail::encode_nonce(w, n, true);
  return hash_bytes(w.bytes());
}

inline Hash256 hash_object(const Miniblock& m) {
  ByteWriter w;
  detail::encode_miniblock(w, m, true);
  return hash_bytes(w.bytes());
}

inline Hash256 hash_object(const Job& j) {
  ByteWriter w;
  detail::encode_job(w, j, true);
  return hash_bytes(w.bytes());
}

inline Hash256 hash_object(const Commit& c) {
  return hash_bytes(canonical_encode(c));
}

inline Hash256 hash_object(const Reveal& v) {
  return hash_bytes(canonical_encode(v));
}

inline Hash256 hash_object(const Transaction& t) {
  return hash_bytes(canonical_encode(t));
}

inline Hash256 hash_object(const Block& b) {
  ByteWriter w;
  detail::encode_block(w, b, true);
  return hash_bytes(w.bytes());
}

inline Hash256 job_id(const Job& j) { return hash_object(j); }

// Commit preimage: hash(minerId || solution bytes).
inline Hash256 solution_hash(const NodeId& miner, std::span<const uint8_t> solution) {
  ByteWriter w;
  w.raw(miner.id);
  w.raw(solution);
  return hash_bytes(w.bytes());
}

// --- decoding ----------------------------------------------------------------

inline Nonce decode_nonce(std::span<const uint8_t> data) {
  ByteReader r(data);
  Nonce n = detail::decode_nonce(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return n;
}

inline Miniblock decode_miniblock(std::span<const uint8_t> data) {
  ByteReader r(data);
  Miniblock m = detail::decode_miniblock(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return m;
}

inline Job decode_job(std::span<const uint8_t> data) {
  ByteReader r(data);
  Job j = detail::decode_job(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return j;
}

inline Commit decode_commit(std::span<const uint8_t> data) {
  ByteReader r(data);
  Commit c = detail::decode_commit(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return c;
}

inline Reveal decode_reveal(std::span<const uint8_t> data) {
  ByteReader r(data);
  Reveal v = detail::decode_reveal(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return v;
}

inline Transaction decode_transaction(std::span<const uint8_t> data) {
  ByteReader r(data);
  Transaction t = detail::decode_transaction(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return t;
}

inline Block decode_block(std::span<const uint8_t> data) {
  ByteReader r(data);
  Block b = detail::decode_block(r);
  if (!r.done()) throw EncodingError("trailing bytes");
  return b;
}

// --- ledger -----------------------------------------------------------------

struct LedgerError : std::runtime_error {
  explicit LedgerError(const std::string& what) : std::runtime_error(what) {}
};

// Balances plus per-job escrow. Supply counts balances and escrow together;
// minted payouts are the only way it grows.
struct LedgerState {
  std::map<NodeId, Amount> balances;
  std::map<Hash256, Amount> escrow;
  Amount supply;

  Amount balance(const NodeId& n) const {
    auto it = balances.find(n);
    return it == balances.end() ? Amount{0} : it->second;
  }

  Amount escrowed(const Hash256& jobId) const {
    auto it = escrow.find(jobId);
    return it == escrow.end() ? Amount{0} : it->second;
  }

  void credit(const NodeId& n, Amount a) {
    auto sum = Amount::add(balance(n), a);
    if (!sum) throw LedgerError("balance overflow");
    balances[n] = *sum;
  }

  void debit(const NodeId& n, Amount a) {
    auto rem = Amount::sub(balance(n), a);
    if (!rem) throw LedgerError("insufficient balance");
    balances[n] = *rem;
  }

  void mint(const NodeId& n, Amount a) {
    auto sum = Amount::add(supply, a);
    if (!sum) throw LedgerError("supply overflow");
    supply = *sum;
    credit(n, a);
  }

  bool operator==(const LedgerState&) const = default;
};

// Applies one block's ledger effects: escrow deposits for new jobs,
// transactions, then payouts. Throws LedgerError on any violation.
inline void apply_block_ledger(LedgerState& ls, const Block& b) {
  for (const Job& j : b.newJobs) {
    if (j.isEmpty) continue;
    ls.debit(j.clientId, j.charge);
    auto sum = Amount::add(ls.escrowed(job_id(j)), j.charge);
    if (!sum) throw LedgerError("escrow overflow");
    ls.escrow[job_id(j)] = *sum;
  }
  for (const Transaction& t : b.transactions) {
    ls.debit(t.from, t.amount);
    ls.credit(t.to, t.amount);
  }
  for (const PayoutEntry& p : b.payouts) {
    switch (p.reason) {
      case PayoutReason::endowment:
      case PayoutReason::miniblock_reward:
        ls.mint(p.node, p.amount);
        break;
      case PayoutReason::job_payment:
      case PayoutReason::job_refund: {
        auto rem = Amount::sub(ls.escrowed(p.jobId), p.amount);
        if (!rem) throw LedgerError("payout exceeds escrow");
        if (rem->coins == 0)
          ls.escrow.erase(p.jobId);
        else
          ls.escrow[p.jobId] = *rem;
        ls.credit(p.node, p.amount);
        break;
      }
    }
  }
}

// --- chain -------------------------------------------------------------------

// Materialized chain: blocks in height order plus, per block, the miniblocks
// mined on top of it (the ones hashed into the next block, or still pending
// at the tip). The ledger is the replayed post-state of the tip.
struct Chain {
  std::vector<Block> blocks;
  std::vector<std::vector<Miniblock>> intervals;
  LedgerState ledger;

  size_t height() const { return blocks.empty() ? 0 : blocks.size() - 1; }
  const Block& tip() const { return blocks.back(); }
  const std::vector<Miniblock>& pending() const { return intervals.back(); }

  void append_block(Block b) {
    blocks.push_back(std::move(b));
    intervals.emplace_back();
    apply_block_ledger(ledger, blocks.back());
  }

  void add_pending(Miniblock m) { intervals.back().push_back(std::move(m)); }
};

inline constexpr char kChainMagic[4] = {'P', 'O', 'S', 'C'};
inline constexpr uint8_t kChainVersion = 1;

// Chain file: magic "POSC", one version byte, then length-prefixed canonical
// objects in chain order — each block followed by the miniblocks mined on it.
inline Bytes encode_chain(const Chain& c) {
  ByteWriter w;
  w.raw(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kChainMagic), 4));
  w.u8(kChainVersion);
  for (size_t h = 0; h < c.blocks.size(); ++h) {
    w.field(canonical_encode(c.blocks[h]));
    for (const Miniblock& m : c.intervals[h]) w.field(canonical_encode(m));
  }
  return w.take();
}

inline Chain decode_chain(std::span<const uint8_t> data) {
  ByteReader r(data);
  Bytes magic = r.raw(4);
  if (std::memcmp(magic.data(), kChainMagic, 4) != 0)
    throw EncodingError("bad chain file magic");
  if (r.u8() != kChainVersion) throw EncodingError("unsupported chain file version");
  Chain c;
  while (!r.done()) {
    Bytes rec = r.field();
    if (rec.empty()) throw EncodingError("empty record");
    if (rec[0] == uint8_t(Tag::block)) {
      Block b = decode_block(rec);
      c.blocks.push_back(std::move(b));
      c.intervals.emplace_back();
    } else if (rec[0] == uint8_t(Tag::miniblock)) {
      if (c.blocks.empty()) throw EncodingError("miniblock before first block");
      c.intervals.back().push_back(decode_miniblock(rec));
    } else if (rec[0] == uint8_t(Tag::chain_params)) {
      // Consensus-parameter record; decoded by the consensus layer.
      continue;
    } else {
      throw EncodingError("unexpected record tag");
    }
  }
  for (const Block& b : c.blocks) apply_block_ledger(c.ledger, b);
  return c;
}

}  // namespace posearch
