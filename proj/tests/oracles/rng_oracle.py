# Copyright (c) 2026, OTA contributors
# SPDX-License-Identifier: Apache-2.0
"""Independent reference for the seeded stream: FNV-1a, splitmix64 and MT19937-64.

Prints the frozen values used by test_core.cpp.
"""

M64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode():
        h ^= b
        h = (h * 0x100000001B3) & M64
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M64
    return x ^ (x >> 31)


class MT64:
    N, M = 312, 156
    A = 0xB5026F5AA96619E9
    UPPER, LOWER = 0xFFFFFFFF80000000, 0x7FFFFFFF

    def __init__(self, seed: int):
        self.mt = [seed & M64]
        for i in range(1, self.N):
            prev = self.mt[-1]
            self.mt.append((6364136223846793005 * (prev ^ (prev >> 62)) + i) & M64)
        self.i = self.N

    def _twist(self):
        mt = self.mt
        for k in range(self.N):
            y = (mt[k] & self.UPPER) | (mt[(k + 1) % self.N] & self.LOWER)
            v = mt[(k + self.M) % self.N] ^ (y >> 1)
            if y & 1:
                v ^= self.A
            mt[k] = v
        self.i = 0

    def next(self) -> int:
        if self.i >= self.N:
            self._twist()
        y = self.mt[self.i]
        self.i += 1
        y ^= (y >> 29) & 0x5555555555555555
        y ^= (y << 17) & 0x71D67FFFEDA60000
        y ^= (y << 37) & 0xFFF7EEE000000000
        y ^= y >> 43
        return y & M64


def stream(seed: int, stream_id: str) -> MT64:
    return MT64(splitmix64(seed ^ splitmix64(fnv1a64(stream_id))))


if __name__ == "__main__":
    print("fnv1a64('')", hex(fnv1a64("")))
    print("fnv1a64('a')", hex(fnv1a64("a")))
    print("splitmix64(0)", hex(splitmix64(0)))
    default = MT64(5489)
    for _ in range(9999):
        default.next()
    print("mt19937_64 default 10000th", default.next())
    for seed, sid in [(42, "test"), (0, ""), (7, "prime_vq/init")]:
        s = stream(seed, sid)
        print(seed, repr(sid), [hex(s.next()) for _ in range(3)])
