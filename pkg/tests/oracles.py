"""Reference SHA-256 and AES-128 written from the FIPS descriptions.

Deliberately slow and independent of hashlib / cryptography, which the
emulator uses.
"""

import struct

# --- SHA-256 (FIPS 180-4) ---------------------------------------------------


def _primes(n):
    out, k = [], 2
    while len(out) < n:
        if all(k % p for p in out if p * p <= k):
            out.append(k)
        k += 1
    return out


def _frac_bits(x):
    return int((x - int(x)) * 2**32) & 0xFFFFFFFF


def _icbrt(n, k):
    # floor of cube root of n * 2**(3k), exact integer arithmetic
    lo, hi = 0, 1 << (k + 8)
    target = n << (3 * k)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if mid**3 <= target:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _isqrt_frac(n):
    from math import isqrt
    return isqrt(n << 64) & 0xFFFFFFFF


_P = _primes(64)
K = [_icbrt(p, 32) & 0xFFFFFFFF for p in _P]
H0 = [_isqrt_frac(p) for p in _P[:8]]


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & 0xFFFFFFFF


def sha256(msg: bytes) -> bytes:
    ml = len(msg) * 8
    msg = msg + b"\x80" + b"\x00" * ((55 - len(msg)) % 64) + struct.pack(">Q", ml)
    h = list(H0)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off:off + 64]))
        for i in range(16, 64):
            s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
            s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & 0xFFFFFFFF)
        a, b, c, d, e, f, g, hh = h
        for i in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + K[i] + w[i]) & 0xFFFFFFFF
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & 0xFFFFFFFF
            a, b, c, d, e, f, g, hh = (t1 + t2) & 0xFFFFFFFF, a, b, c, (d + t1) & 0xFFFFFFFF, e, f, g
        h = [(x + y) & 0xFFFFFFFF for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return struct.pack(">8I", *h)


# --- AES-128 (FIPS 197) -----------------------------------------------------


def _xtime(a):
    a <<= 1
    return (a ^ 0x11B) if a & 0x100 else a


def _gmul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _sbox():
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if _gmul(x, y) == 1:
                inv[x] = y
                break
    box = []
    for x in range(256):
        b = inv[x]
        s = b
        for k in range(1, 5):
            s ^= ((b << k) | (b >> (8 - k))) & 0xFF
        box.append(s ^ 0x63)
    return box


SBOX = _sbox()
INV_SBOX = [0] * 256
for _i, _v in enumerate(SBOX):
    INV_SBOX[_v] = _i


def expand_key(key: bytes) -> list[list[int]]:
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    rcon = 1
    for i in range(4, 44):
        t = list(words[i - 1])
        if i % 4 == 0:
            t = [SBOX[b] for b in t[1:] + t[:1]]
            t[0] ^= rcon
            rcon = _xtime(rcon)
        words.append([x ^ y for x, y in zip(words[i - 4], t)])
    return [sum(words[r * 4:r * 4 + 4], []) for r in range(11)]


def _mix(col, m):
    return [_gmul(col[0], m[0]) ^ _gmul(col[1], m[1]) ^ _gmul(col[2], m[2]) ^ _gmul(col[3], m[3])
            for m in (m, m[3:] + m[:3], m[2:] + m[:2], m[1:] + m[:1])]


def _shift(s, direction):
    # state is column-major: s[c*4 + r]
    return [s[((c + direction * r) % 4) * 4 + r] for c in range(4) for r in range(4)]


def encrypt_block(key: bytes, block: bytes) -> bytes:
    rk = expand_key(key)
    s = [a ^ b for a, b in zip(block, rk[0])]
    for rnd in range(1, 11):
        s = _shift([SBOX[b] for b in s], 1)
        if rnd != 10:
            s = sum((_mix(s[c * 4:c * 4 + 4], [2, 3, 1, 1]) for c in range(4)), [])
        s = [a ^ b for a, b in zip(s, rk[rnd])]
    return bytes(s)


def decrypt_block(key: bytes, block: bytes) -> bytes:
    rk = expand_key(key)
    s = [a ^ b for a, b in zip(block, rk[10])]
    for rnd in range(9, -1, -1):
        s = [INV_SBOX[b] for b in _shift(s, -1)]
        s = [a ^ b for a, b in zip(s, rk[rnd])]
        if rnd:
            s = sum((_mix(s[c * 4:c * 4 + 4], [14, 11, 13, 9]) for c in range(4)), [])
    return bytes(s)


def aes_ecb(key: bytes, data: bytes, decrypt: bool = False) -> bytes:
    fn = decrypt_block if decrypt else encrypt_block
    return b"".join(fn(key, data[i:i + 16]) for i in range(0, len(data), 16))
