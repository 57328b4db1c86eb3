#!/usr/bin/env python3
"""Independent edge-hash values and the uniform-hash collision expectation."""

M = 65536


def edge_hash(s, t):
    return (((s >> 2) * 0x9E3779B1) ^ ((t >> 2) * 0x85EBCA77)) % M


for s, t in [(0x1000, 0x1000), (0x1000, 0x1004), (0x4000A0, 0x400100), (0, 0), (0xFFFFFFFC, 0x4)]:
    print(f"{s:#x} {t:#x} {edge_hash(s, t)}")

n = 10000
occupied = M * (1 - (1 - 1 / M) ** n)
singletons = n * (1 - 1 / M) ** (n - 1)
print(f"expected singleton fraction of occupied buckets for {n} edges: {singletons / occupied:.4f}")
