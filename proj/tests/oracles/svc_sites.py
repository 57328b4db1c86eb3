#!/usr/bin/env python3
"""Freeze the svc sites of the ELF fixtures as disassembled by capstone.

Writes `file offset immediate` lines to tests/data/elf/svc_sites.txt, where
offset is the link-time address inside the file. The rewriter test scans the
loaded image and must find exactly these sites. Re-run when fixtures change.
"""
import sys
from pathlib import Path

import capstone
from elftools.elf.elffile import ELFFile

FILES = ["hdcp_optee.elf", "hdcp_teegris.elf", "libtzsl.so", "libscrypto.so", "hdcp_optee32.elf"]


def sites(path):
    md = capstone.Cs(capstone.CS_ARCH_ARM64, capstone.CS_MODE_ARM)
    md.skipdata = True
    with open(path, "rb") as f:
        elf = ELFFile(f)
        for seg in elf.iter_segments():
            if seg["p_type"] != "PT_LOAD" or not seg["p_flags"] & 1:
                continue
            data = seg.data()
            for off in range(0, len(data) - 3, 4):
                for insn in md.disasm(data[off:off + 4], seg["p_vaddr"] + off):
                    if insn.mnemonic == "svc":
                        yield seg["p_vaddr"] + off, int(insn.op_str.lstrip("#"), 0)


def main():
    data = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "elf"
    with open(data / "svc_sites.txt", "w") as out:
        for name in FILES:
            for off, imm in sites(data / name):
                out.write(f"{name} {off:#x} {imm}\n")


if __name__ == "__main__":
    main()
