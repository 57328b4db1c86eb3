#pragma once

// Fixed-width 32-bit instruction subset of the A64 encoding space.
//
// Everything the engine executes, the analyzer reasons about and corpusgen
// emits goes through this header. Encodings are the architectural A64 ones,
// so generated images disassemble correctly with off-the-shelf tools.

#include <cstdint>
#include <optional>
#include <string>

namespace taforge::isa {

// Register number 31 is SP or ZR depending on the instruction form.
inline constexpr std::uint8_t kSp = 31;
inline constexpr std::uint8_t kZr = 31;
inline constexpr std::uint8_t kLr = 30;

enum class Op : std::uint8_t {
  kInvalid,
  kAddImm,   // ADD/ADDS/SUB/SUBS (immediate): see `sub`, `set_flags`
  kAddReg,   // ADD/ADDS/SUB/SUBS (shifted register)
  kLogicReg, // AND/ORR/EOR/ANDS (shifted register)
  kLogicImm, // AND/ORR/EOR/ANDS (bitmask immediate)
  kMovWide,  // MOVN/MOVZ/MOVK
  kBitfield, // SBFM/UBFM
  kShiftReg, // LSLV/LSRV/ASRV
  kDiv,      // UDIV/SDIV
  kMulAdd,   // MADD/MSUB
  kLoadStore,    // LDR/STR (unsigned immediate offset)
  kLoadStoreReg, // LDR/STR (register offset)
  kAdr,
  kB,
  kBl,
  kBCond,
  kCbz,  // CBZ/CBNZ: see `nonzero`
  kBr,
  kBlr,
  kRet,
  kSvc,
  kHvc,
  kBrk,
  kNop,
};

enum class LogicOp : std::uint8_t { kAnd = 0, kOrr = 1, kEor = 2, kAnds = 3 };
enum class ShiftType : std::uint8_t { kLsl = 0, kLsr = 1, kAsr = 2, kRor = 3 };
enum class MoveOp : std::uint8_t { kMovn = 0, kMovz = 2, kMovk = 3 };
enum class Extend : std::uint8_t { kUxtw = 2, kLsl = 3, kSxtw = 6, kSxtx = 7 };

enum Cond : std::uint8_t {
  kEq = 0, kNe, kCs, kCc, kMi, kPl, kVs, kVc, kHi, kLs, kGe, kLt, kGt, kLe, kAl, kNv
};

struct Insn {
  Op op = Op::kInvalid;
  bool sf = true;          // 64-bit operation
  bool sub = false;        // kAddImm / kAddReg: subtract
  bool set_flags = false;  // S bit
  bool is_load = false;    // kLoadStore*
  bool nonzero = false;    // kCbz: CBNZ
  bool is_signed = false;  // kDiv: SDIV; kBitfield: SBFM; kMulAdd: MSUB
  std::uint8_t rd = 0;     // also Rt for loads/stores and CBZ
  std::uint8_t rn = 0;
  std::uint8_t rm = 0;
  std::uint8_t ra = 0;
  std::uint8_t size_log2 = 0;  // memory access width = 1 << size_log2
  std::uint8_t shift = 0;      // ShiftType, MoveOp, LogicOp or Extend, by form
  std::uint8_t amount = 0;     // shift amount / hw*16 / register-offset scale flag
  std::uint8_t cond = 0;        // condition code; shift type for kAddReg/kLogicReg
  std::uint8_t immr = 0;
  std::uint8_t imms = 0;
  std::int64_t imm = 0;  // immediate value or pc-relative byte offset
};

Insn decode(std::uint32_t word);

inline bool is_svc(std::uint32_t word) { return (word & 0xFFE0'001Fu) == 0xD400'0001u; }
inline std::uint16_t svc_immediate(std::uint32_t word) {
  return static_cast<std::uint16_t>((word >> 5) & 0xFFFF);
}

// Branches ending a basic block.
bool is_block_terminator(const Insn& insn);
// Direct branch target for B/BL/B.cond/CBZ/CBNZ.
std::optional<std::uint64_t> direct_target(const Insn& insn, std::uint64_t pc);

// Expands an A64 logical-immediate field. Empty for reserved encodings.
std::optional<std::uint64_t> decode_bit_masks(bool n, std::uint8_t imms, std::uint8_t immr,
                                              unsigned datasize);

// Text rendering in the conventional alias-preferring assembler syntax.
std::string disassemble(std::uint32_t word, std::uint64_t pc);
std::string cond_name(std::uint8_t cond);

// Encoders. Arguments are not range-checked beyond the field masks except
// where the function returns optional.
namespace enc {

std::uint32_t add_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12,
                      bool shift12 = false);
std::uint32_t adds_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12);
std::uint32_t sub_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12,
                      bool shift12 = false);
std::uint32_t subs_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12);
std::uint32_t cmp_imm(bool sf, std::uint8_t rn, std::uint32_t imm12);

std::uint32_t add_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                      ShiftType shift = ShiftType::kLsl, std::uint8_t amount = 0);
std::uint32_t sub_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                      ShiftType shift = ShiftType::kLsl, std::uint8_t amount = 0);
std::uint32_t subs_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm);
std::uint32_t cmp_reg(bool sf, std::uint8_t rn, std::uint8_t rm);

std::uint32_t logic_reg(LogicOp op, bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                        ShiftType shift = ShiftType::kLsl, std::uint8_t amount = 0);
std::optional<std::uint32_t> logic_imm(LogicOp op, bool sf, std::uint8_t rd, std::uint8_t rn,
                                       std::uint64_t value);
std::uint32_t mov_reg(bool sf, std::uint8_t rd, std::uint8_t rm);
std::uint32_t mov_sp(std::uint8_t rd, std::uint8_t rn);  // ADD rd, rn, #0 (SP-capable)

std::uint32_t movz(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw = 0);
std::uint32_t movk(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw = 0);
std::uint32_t movn(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw = 0);

std::uint32_t ubfm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t immr,
                   std::uint8_t imms);
std::uint32_t sbfm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t immr,
                   std::uint8_t imms);
std::uint32_t lsl_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift);
std::uint32_t lsr_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift);
std::uint32_t asr_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift);
std::uint32_t shift_reg(ShiftType type, bool sf, std::uint8_t rd, std::uint8_t rn,
                        std::uint8_t rm);

std::uint32_t madd(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm, std::uint8_t ra);
std::uint32_t msub(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm, std::uint8_t ra);
std::uint32_t mul(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm);
std::uint32_t udiv(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm);
std::uint32_t sdiv(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm);

// size_log2: 0 byte, 1 half, 2 word, 3 doubleword. Offset in bytes; must be a
// multiple of the access size and < 4096 * size.
std::uint32_t ldr_imm(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint32_t offset);
std::uint32_t str_imm(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint32_t offset);
// [rn, rm, LSL #size_log2] when scaled, else [rn, rm].
std::uint32_t ldr_reg(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint8_t rm,
                      bool scaled);
std::uint32_t str_reg(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint8_t rm,
                      bool scaled);

std::uint32_t adr(std::uint8_t rd, std::int64_t offset);
std::uint32_t b(std::int64_t offset);
std::uint32_t bl(std::int64_t offset);
std::uint32_t b_cond(std::uint8_t cond, std::int64_t offset);
std::uint32_t cbz(bool sf, std::uint8_t rt, std::int64_t offset);
std::uint32_t cbnz(bool sf, std::uint8_t rt, std::int64_t offset);
std::uint32_t br(std::uint8_t rn);
std::uint32_t blr(std::uint8_t rn);
std::uint32_t ret(std::uint8_t rn = kLr);
std::uint32_t svc(std::uint16_t imm16);
std::uint32_t hvc(std::uint16_t imm16);
std::uint32_t brk(std::uint16_t imm16);
std::uint32_t nop();

}  // namespace enc

}  // namespace taforge::isa
