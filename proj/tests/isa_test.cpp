#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "taforge/isa.hpp"

namespace taforge::isa {
namespace {

// Mnemonics capstone produces for encodings outside the implemented subset.
const std::set<std::string> kOutsideSubset = {
    "ror", "bic", "bics", "orn", "eon", "mvn", "ldrsb", "ldrsh", "ldrsw", "prfm", "prfum",
    "ldrb", "strb", "ldrh", "strh", "sxtb", "sxth", "sxtw", "uxtb", "uxth", "bfi", "bfxil",
    "smaddl", "umaddl", "adrp", "hlt", "dcps1", "dcps2", "dcps3", "smc", "crc32b",
    "bfm", "bfc", "ngc", "cmn", "negs"};

TEST(IsaCapstone, DecodeMatchesFrozenDisassembly) {
  std::ifstream in(std::string(TAFORGE_TEST_DATA) + "/isa_capstone.txt");
  ASSERT_TRUE(in.good());
  std::string line;
  int checked = 0, mismatches = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word_hex, pc_hex;
    ls >> word_hex >> pc_hex;
    std::string expected;
    std::getline(ls, expected);
    expected.erase(0, expected.find_first_not_of(' '));
    const auto word = static_cast<std::uint32_t>(std::stoul(word_hex, nullptr, 16));
    const auto pc = std::stoull(pc_hex, nullptr, 16);
    const Insn insn = decode(word);
    const std::string mnemonic = expected.substr(0, expected.find(' '));
    if (insn.op == Op::kInvalid) {
      EXPECT_TRUE(kOutsideSubset.count(mnemonic) || expected.rfind("ldr", 0) == 0 ||
                  expected.rfind("str", 0) == 0)
          << "rejected in-subset word " << word_hex << " (" << expected << ")";
      continue;
    }
    const std::string got = disassemble(word, pc);
    if (got != expected) {
      ++mismatches;
      ADD_FAILURE() << word_hex << ": got '" << got << "' capstone '" << expected << "'";
    }
    ++checked;
  }
  EXPECT_GT(checked, 600);
  EXPECT_EQ(mismatches, 0);
}

TEST(Isa, SvcWordDecodesWithImmediate) {
  EXPECT_TRUE(is_svc(0xD4000001u));
  EXPECT_EQ(svc_immediate(0xD4000001u), 0);
  const Insn i = decode(enc::svc(0x1234));
  EXPECT_EQ(i.op, Op::kSvc);
  EXPECT_EQ(i.imm, 0x1234);
  EXPECT_FALSE(is_svc(enc::hvc(0)));
  EXPECT_FALSE(is_svc(enc::brk(1)));
}

TEST(Isa, BitmaskEncoderRoundTripsEveryEncodableValue) {
  std::mt19937_64 rng(7);
  int encoded = 0;
  for (int n = 0; n < 5000; ++n) {
    // Random run of ones, rotated and replicated: always encodable.
    const unsigned esize = 2u << (rng() % 6);
    const unsigned len = 1 + rng() % (esize - 1);
    const unsigned rot = rng() % esize;
    std::uint64_t elem = (len >= 64 ? ~0ull : (1ull << len) - 1);
    if (rot) elem = ((elem >> rot) | (elem << (esize - rot))) & (esize == 64 ? ~0ull : (1ull << esize) - 1);
    std::uint64_t v = 0;
    for (unsigned p = 0; p < 64; p += esize) v |= elem << p;
    auto w = enc::logic_imm(LogicOp::kOrr, true, 1, 2, v);
    ASSERT_TRUE(w.has_value());
    const Insn i = decode(*w);
    ASSERT_EQ(i.op, Op::kLogicImm);
    EXPECT_EQ(static_cast<std::uint64_t>(i.imm), v);
    ++encoded;
  }
  EXPECT_EQ(encoded, 5000);
  EXPECT_FALSE(enc::logic_imm(LogicOp::kAnd, true, 0, 0, 0).has_value());
  EXPECT_FALSE(enc::logic_imm(LogicOp::kAnd, true, 0, 0, ~0ull).has_value());
  EXPECT_FALSE(enc::logic_imm(LogicOp::kAnd, false, 0, 0, 0x1234).has_value());
}

TEST(Isa, BranchOffsetsRoundTrip) {
  for (std::int64_t off : {-4ll, 4ll, 0x40ll, -0x1000ll, (1ll << 20) - 4, -(1ll << 20)}) {
    EXPECT_EQ(decode(enc::b_cond(kNe, off)).imm, off);
    EXPECT_EQ(decode(enc::cbz(false, 3, off)).imm, off);
    EXPECT_EQ(decode(enc::b(off)).imm, off);
    EXPECT_EQ(decode(enc::bl(off)).imm, off);
    EXPECT_EQ(decode(enc::adr(5, off)).imm, off);
  }
  EXPECT_EQ(decode(enc::b(32ll << 20)).imm, 32ll << 20);
}

}  // namespace
}  // namespace taforge::isa
