#!/usr/bin/env python3
"""Freeze a decode/disassembly conformance table from capstone.

Random words are drawn from the A64 encoding classes the engine implements,
disassembled with capstone, and written as `word pc text` lines. The C++
test decodes each word with taforge::isa and must render the same text.
Re-run only when the instruction subset changes.
"""
import random
import sys

import capstone

# (name, fixed_mask, fixed_value) per encoding class; free bits are random.
CLASSES = [
    ("add_sub_imm", 0x1F800000, 0x11000000),
    ("logic_imm", 0x1F800000, 0x12000000),
    ("move_wide", 0x1F800000, 0x12800000),
    ("bitfield", 0x1F800000, 0x13000000),
    ("adr", 0x9F000000, 0x10000000),
    ("add_sub_reg", 0x1F200000, 0x0B000000),
    ("logic_reg", 0x1F200000, 0x0A000000),
    ("dp2_div", 0x7FE0F800, 0x1AC00800),
    ("dp2_shift", 0x7FE0F000, 0x1AC02000),
    ("madd", 0x7FE00000, 0x1B000000),
    ("ldst_uimm", 0x3F800000, 0x39000000),
    ("ldst_reg", 0x3F800C00, 0x38200800),
    ("b_bl", 0x7C000000, 0x14000000),
    ("b_cond", 0xFF000010, 0x54000000),
    ("cbz", 0x7E000000, 0x34000000),
    ("br_blr_ret", 0xFF9FFC1F, 0xD61F0000),
    ("exc", 0xFFE0001C, 0xD4000000),
]


def main():
    out_path = sys.argv[1]
    rng = random.Random(20240607)
    md = capstone.Cs(capstone.CS_ARCH_ARM64, capstone.CS_MODE_ARM)
    lines = []
    for name, mask, value in CLASSES:
        kept = 0
        tries = 0
        while kept < 60 and tries < 20000:
            tries += 1
            word = (rng.getrandbits(32) & ~mask) | value
            if name == "exc" and (word & 0x3) not in (1, 2) and (word >> 21) & 7 != 1:
                continue
            pc = 0x400000 + 4 * rng.randrange(0x4000)
            insns = list(md.disasm(word.to_bytes(4, "little"), pc))
            if not insns:
                continue
            text = (insns[0].mnemonic + " " + insns[0].op_str).strip()
            lines.append(f"{word:08x} {pc:x} {text}")
            kept += 1
    lines.append(f"{0xd503201f:08x} 400000 nop")
    with open(out_path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
