#include "posearch/core.hpp"

#include <gtest/gtest.h>

#include <unordered_set>

#include "posearch/rng.hpp"

using namespace posearch;

namespace {

Hash256 h256(uint8_t fill) {
  Hash256 h;
  h.bytes.fill(fill);
  return h;
}

ProgramPair tiny_programs() {
  ProgramPair p;
  p.evaluator.instructions = {{Op::PUSH, 0}, {Op::HALT, 0}};
  p.searcher.instructions = {{Op::RAND, 0}, {Op::HALT, 0}};
  return p;
}

Job random_job(Rng& rng) {
  ProgramPair p;
  uint32_t n = uint32_t(rng.below(20)) + 1;
  for (uint32_t i = 0; i < n; ++i)
    p.evaluator.instructions.push_back({Op::PUSH, rng.next()});
  p.evaluator.instructions.push_back({Op::HALT, 0});
  p.searcher.instructions = {{Op::HALT, 0}};
  return Job::make(NodeId::from_u64(rng.next()), Amount{rng.below(1000) + 1},
                   rng.below(10000) + 1, std::move(p));
}

Nonce random_nonce(Rng& rng) {
  Nonce n;
  Bytes c(rng.below(40));
  for (uint8_t& b : c) b = uint8_t(rng.next());
  n.candidate = c;
  n.evalValue = rng.next();
  return n;
}

Miniblock random_miniblock(Rng& rng) {
  Miniblock m;
  for (uint8_t& b : m.prevBlockHash.bytes) b = uint8_t(rng.next());
  m.jobSlot = uint16_t(rng.below(16));
  m.minerId = NodeId::from_u64(rng.next());
  m.nonce = random_nonce(rng);
  return m;
}

Block sample_block() {
  Block b;
  b.prevBlockHash = h256(0xAA);
  b.height = 7;
  b.timestamp = 123456;
  b.miniblockHashes = {h256(1), h256(2)};
  b.transactions = {{NodeId::from_u64(1), NodeId::from_u64(2), Amount{5}}};
  b.newJobs = {Job::make(NodeId::from_u64(3), Amount{11}, 100, tiny_programs())};
  b.scheduledJobs = {{h256(9), 12}};
  b.commits = {{h256(9), NodeId::from_u64(4), 77, h256(5)}};
  b.reveals = {{h256(9), NodeId::from_u64(4), Bytes{1, 2, 3}}};
  b.payouts = {{NodeId::from_u64(4), Amount{11}, PayoutReason::job_payment, h256(9)}};
  return b;
}

TEST(Sha256, StandardVectors) {
  EXPECT_EQ(to_hex(sha256({})),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const char* abc = "abc";
  EXPECT_EQ(to_hex(sha256({reinterpret_cast<const uint8_t*>(abc), 3})),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // Multi-block message (56 bytes forces the padding split).
  std::string msg = "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
  EXPECT_EQ(to_hex(sha256({reinterpret_cast<const uint8_t*>(msg.data()), msg.size()})),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Encoding, Deterministic) {
  Rng rng(7);
  Job j = random_job(rng);
  EXPECT_EQ(canonical_encode(j), canonical_encode(j));
}

TEST(Encoding, NoncesDifferingInValueDiffer) {
  Nonce a{Bytes{1, 2, 3}, 10};
  Nonce b{Bytes{1, 2, 3}, 11};
  EXPECT_NE(canonical_encode(a), canonical_encode(b));
}

// Layout check, computed by hand from the encoding rules: tag byte, then
// per field a 4-byte length prefix and the payload. An all-zero miniblock
// with an empty (present) candidate encodes to exactly these 77 bytes.
TEST(Encoding, FrozenMiniblockLayout) {
  Miniblock m;
  m.nonce.candidate = Bytes{};
  m.nonce.evalValue = 0;
  Bytes enc = canonical_encode(m);
  std::string expected =
      "03"                                                                  // tag
      "00000020" "0000000000000000000000000000000000000000000000000000000000000000"  // prev
      "00000002" "0000"                                                     // jobSlot
      "00000008" "0000000000000000"                                         // minerId
      "00000012"                                                            // nonce field (18)
      "02"                                                                  // nonce tag
      "00000001" "01"                                                       // candidate section
      "00000008" "0000000000000000";                                        // evalValue
  EXPECT_EQ(enc.size(), 77u);
  EXPECT_EQ(to_hex(enc), expected);
}

TEST(Encoding, RoundTripAllTypes) {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    Job j = random_job(rng);
    EXPECT_EQ(decode_job(canonical_encode(j)), j);
    Nonce n = random_nonce(rng);
    EXPECT_EQ(decode_nonce(canonical_encode(n)), n);
    Miniblock m = random_miniblock(rng);
    EXPECT_EQ(decode_miniblock(canonical_encode(m)), m);
    Commit c{h256(uint8_t(i)), NodeId::from_u64(rng.next()), rng.next(), h256(3)};
    EXPECT_EQ(decode_commit(canonical_encode(c)), c);
    Reveal v{h256(uint8_t(i)), NodeId::from_u64(rng.next()), Bytes{uint8_t(i), 9}};
    EXPECT_EQ(decode_reveal(canonical_encode(v)), v);
    Transaction t{NodeId::from_u64(rng.next()), NodeId::from_u64(rng.next()),
                  Amount{rng.next() >> 1}};
    EXPECT_EQ(decode_transaction(canonical_encode(t)), t);
  }
  Block b = sample_block();
  EXPECT_EQ(decode_block(canonical_encode(b)), b);
}

TEST(Encoding, CompactedJobRoundTripsAndHashesIdentically) {
  Rng rng(5);
  Job full = random_job(rng);
  Job stripped = full.without_bodies();
  EXPECT_EQ(decode_job(canonical_encode(stripped)), stripped);
  EXPECT_EQ(hash_object(full), hash_object(stripped));
  EXPECT_NE(canonical_encode(full), canonical_encode(stripped));
}

TEST(Encoding, BlockHashStableUnderBodyStripping) {
  Block b = sample_block();
  Block stripped = b;
  for (Job& j : stripped.newJobs) j = j.without_bodies();
  EXPECT_EQ(hash_object(b), hash_object(stripped));
}

TEST(Hashing, SameObjectTwice) {
  Rng rng(11);
  Miniblock m = random_miniblock(rng);
  EXPECT_EQ(hash_object(m), hash_object(m));
}

TEST(Hashing, DomainSeparation) {
  // A miniblock and a block never hash alike: different tag bytes.
  Miniblock m;
  m.nonce.candidate = Bytes{};
  Block b;
  EXPECT_NE(hash_object(m), hash_object(b));
}

TEST(Hashing, NoCollisionsOnLargeCorpus) {
  Rng rng(99);
  std::unordered_set<Hash256> seen;
  const int kCount = 1000000;
  seen.reserve(kCount);
  Nonce n;
  n.candidate = Bytes(8);
  for (int i = 0; i < kCount; ++i) {
    uint64_t v = rng.next();
    for (int j = 0; j < 8; ++j) (*n.candidate)[j] = uint8_t(v >> (8 * j));
    n.evalValue = uint64_t(i);
    seen.insert(hash_object(n));
  }
  EXPECT_EQ(seen.size(), size_t(kCount));
}

TEST(LeadingZeroBits, Examples) {
  EXPECT_EQ(leading_zero_bits(h256(0)), 256);
  Hash256 h;
  h.bytes[0] = 0x80;
  EXPECT_EQ(leading_zero_bits(h), 0);
  h.bytes[0] = 0x01;
  EXPECT_EQ(leading_zero_bits(h), 7);
}

// leading_zero_bits(h) >= z iff the integer value of h < 2^(256-z).
TEST(LeadingZeroBits, ThresholdEquivalence) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    Hash256 h;
    int zeroBytes = int(rng.below(4));
    for (int i = zeroBytes; i < 32; ++i) h.bytes[i] = uint8_t(rng.next());
    int z = int(rng.below(40));
    // value < 2^(256-z): the top z bits are all zero.
    bool below = true;
    for (int bit = 0; bit < z; ++bit) {
      if (h.bytes[bit / 8] >> (7 - bit % 8) & 1) {
        below = false;
        break;
      }
    }
    EXPECT_EQ(leading_zero_bits(h) >= z, below);
  }
}

TEST(Ledger, EscrowAndPayoutConservation) {
  LedgerState ls;
  NodeId client = NodeId::from_u64(1), miner = NodeId::from_u64(2);
  ls.mint(client, Amount{100});
  Block b;
  Job j = Job::make(client, Amount{40}, 100, tiny_programs());
  b.newJobs = {j};
  apply_block_ledger(ls, b);
  EXPECT_EQ(ls.balance(client).coins, 60u);
  EXPECT_EQ(ls.escrowed(job_id(j)).coins, 40u);
  EXPECT_EQ(ls.supply.coins, 100u);

  Block settle;
  settle.payouts = {{miner, Amount{40}, PayoutReason::job_payment, job_id(j)}};
  apply_block_ledger(ls, settle);
  EXPECT_EQ(ls.balance(miner).coins, 40u);
  EXPECT_EQ(ls.escrowed(job_id(j)).coins, 0u);
  EXPECT_EQ(ls.supply.coins, 100u);
}

TEST(Ledger, RejectsOverdraft) {
  LedgerState ls;
  Block b;
  b.transactions = {{NodeId::from_u64(1), NodeId::from_u64(2), Amount{1}}};
  EXPECT_THROW(apply_block_ledger(ls, b), LedgerError);
}

TEST(ChainFile, RoundTrip) {
  Chain c;
  Block genesis;
  genesis.payouts = {{NodeId::from_u64(1), Amount{1000}, PayoutReason::endowment, Hash256{}}};
  c.append_block(genesis);
  Rng rng(17);
  c.add_pending(random_miniblock(rng));
  Block b1 = sample_block();
  b1.prevBlockHash = hash_object(genesis);
  b1.height = 1;
  b1.transactions.clear();
  b1.newJobs.clear();
  b1.payouts.clear();
  b1.commits.clear();
  b1.reveals.clear();
  c.append_block(b1);
  c.add_pending(random_miniblock(rng));
  c.add_pending(random_miniblock(rng));

  Bytes file = encode_chain(c);
  EXPECT_EQ(file[0], 'P');
  EXPECT_EQ(file[4], 1);  // version
  Chain d = decode_chain(file);
  EXPECT_EQ(d.blocks, c.blocks);
  EXPECT_EQ(d.intervals, c.intervals);
  EXPECT_EQ(d.ledger, c.ledger);
}

}  // namespace
