#!/usr/bin/env python3
"""Independent oracle for the test fixtures.

Builds every byte layout from field values with Python's hashlib, struct and
the `cryptography` AES-GCM primitive, without touching the C++ code. Run once
and commit the output; the C++ tests compare against the frozen files.

    python3 gen_fixtures.py  # writes *.txt next to this script
"""

import hashlib
import os
import struct

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

HERE = os.path.dirname(os.path.abspath(__file__))


def challenge_input(icv, tin, port, cci, r):
    assert len(icv) == 16 and r < (1 << 28) and cci < 16
    return icv + struct.pack(">QHBI", tin, port, cci, r)


def lzb(digest):
    n = 0
    for b in digest:
        if b == 0:
            n += 8
            continue
        return n + (8 - b.bit_length())
    return n


def brute_force(icv, tin, port, cci, start):
    r, steps = start, 0
    while True:
        d = hashlib.sha256(challenge_input(icv, tin, port, cci, r)).digest()
        if lzb(d) >= cci:
            return r, steps + 1
        r = (r + 1) % (1 << 28)
        steps += 1


def challenge_vectors():
    lines = ["# digest <icv> <tin> <port> <cci> <r> <sha256>",
             "# solve <icv> <tin> <port> <cci> <start> <mrn> <iterations>"]
    insts = [
        (bytes(16), 0, 0, 0),
        (bytes(range(16)), 0x0123456789ABCDEF, 443, 8),
        (bytes([0xFF] * 16), 0xFFFFFFFFFFFFFFFF, 65535, 15),
        (bytes.fromhex("a1b2c3d4e5f60718293a4b5c6d7e8f90"), 42, 51000, 12),
    ]
    for icv, tin, port, cci in insts:
        for r in (0, 1, 0x0ABCDEF, (1 << 28) - 1):
            d = hashlib.sha256(challenge_input(icv, tin, port, cci, r)).hexdigest()
            lines.append(f"digest {icv.hex()} {tin} {port} {cci} {r} {d}")
    solves = [
        (bytes(range(16)), 0x0123456789ABCDEF, 443, 8, 0),
        (bytes(16), 0, 0, 8, 0),
        (bytes.fromhex("a1b2c3d4e5f60718293a4b5c6d7e8f90"), 42, 51000, 10, 12345),
        (bytes([0x5A] * 16), 7, 8443, 4, (1 << 28) - 3),
    ]
    for icv, tin, port, cci, start in solves:
        mrn, iters = brute_force(icv, tin, port, cci, start)
        lines.append(f"solve {icv.hex()} {tin} {port} {cci} {start} {mrn} {iters}")
    return lines


def token_vectors():
    key = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
    iv_base = bytes.fromhex("a0a1a2a3a4a5a6a7a8a9aaab")
    tt, seq, tin, cci = 0, 5, 0x1122334455667788, 12
    expiry, odcid, sport, opaque = 1_700_000_030, bytes.fromhex("8394c8f03e515708"), 51000, b""
    client_ip = bytes(10) + b"\xff\xff" + bytes([192, 0, 2, 7])
    rscid = bytes.fromhex("f067a5502a4262b5")

    body = struct.pack(">QB", expiry, len(odcid)) + odcid + struct.pack(">HH", sport, len(opaque)) + opaque
    ad = client_ip + bytes([(tt << 7) | seq]) + struct.pack(">Q", tin) + bytes([cci, len(rscid)]) + rscid
    nonce = bytes(a ^ b for a, b in zip(iv_base, bytes(4) + struct.pack(">Q", tin)))
    sealed = AESGCM(key).encrypt(nonce, body, ad)
    etb, icv = sealed[:-16], sealed[-16:]
    header = bytes([(tt << 7) | seq]) + struct.pack(">QI", tin, (0 << 4) | cci)
    token = header + struct.pack(">H", len(etb)) + etb + icv
    return [
        "# key iv_base type seq tin cci expiry odcid source_port client_ip rscid nonce token",
        " ".join([key.hex(), iv_base.hex(), str(tt), str(seq), str(tin), str(cci), str(expiry),
                  odcid.hex(), str(sport), client_ip.hex(), rscid.hex(), nonce.hex(), token.hex()]),
    ]


def cid(b):
    return bytes([len(b)]) + b


def golden_datagrams():
    lines = ["# <variant> <fields...> <datagram hex>"]
    # Initial: tag 0x01 | version | dcid | scid | token(2) | group(2) | key_share(2)
    dcid, scid, ks = bytes.fromhex("0102030405060708"), bytes.fromhex("a1a2a3a4a5a6a7a8"), bytes(range(32))
    dg = b"\x01" + struct.pack(">I", 1) + cid(dcid) + cid(scid) + struct.pack(">H", 0) + struct.pack(">H", 0x001D) \
        + struct.pack(">H", len(ks)) + ks
    lines.append(f"initial 1 {dcid.hex()} {scid.hex()} - {0x001D} {ks.hex()} {dg.hex()}")
    tok = bytes([0x05]) + struct.pack(">QI", 0xDEADBEEF, (77 << 4) | 9) + struct.pack(">H", 3) + b"\xAA\xBB\xCC" \
        + bytes(range(16))
    dg = b"\x01" + struct.pack(">I", 1) + cid(dcid) + cid(scid) + struct.pack(">H", len(tok)) + tok \
        + struct.pack(">H", 0x0018) + struct.pack(">H", 4) + b"\x04\x01\x02\x03"
    lines.append(f"initial 1 {dcid.hex()} {scid.hex()} {tok.hex()} {0x0018} 04010203 {dg.hex()}")
    # Retry: long header byte | version | dcid | scid | token (remainder)
    for mit in (1, 0):
        first = 0xC0 | 0x30 | (mit << 3)
        dg = bytes([first]) + struct.pack(">I", 1) + cid(scid) + cid(dcid) + tok
        lines.append(f"retry {mit} 1 {scid.hex()} {dcid.hex()} {tok.hex()} {dg.hex()}")
    # Shlo: tag 0x03 | dcid | scid | group(2) | key_share(2)
    dg = b"\x03" + cid(scid) + cid(dcid) + struct.pack(">HH", 0x001D, len(ks)) + ks
    lines.append(f"shlo {scid.hex()} {dcid.hex()} {0x001D} {ks.hex()} {dg.hex()}")
    # Reject: tag 0x04 | dcid | reason
    for reason in (1, 2, 3, 4):
        dg = b"\x04" + cid(scid) + bytes([reason])
        lines.append(f"reject {scid.hex()} {reason} {dg.hex()}")
    return lines


def write(name, lines):
    with open(os.path.join(HERE, name), "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    write("challenge_vectors.txt", challenge_vectors())
    write("token_vectors.txt", token_vectors())
    write("golden_datagrams.txt", golden_datagrams())
