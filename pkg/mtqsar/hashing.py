# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Fixed, process-independent hashing helpers.

Python's builtin ``hash`` is salted per process, so everything that must be
bit-exact across runs and platforms (fingerprint bits, derived seeds, content
hashes in run manifests) goes through the functions below.
"""

import hashlib
from typing import Iterable

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(value: int) -> int:
    """One round of the splitmix64 finalizer on a 64-bit integer."""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_ints(values: Iterable[int]) -> int:
    """Mix a sequence of integers into one 64-bit value.

    The state starts at zero and each value (two's complement, masked to 64
    bits) is xor-ed in and passed through :func:`splitmix64`. The length is
    folded in last so that prefixes hash differently.
    """
    state = 0
    count = 0
    for value in values:
        state = splitmix64(state ^ (value & MASK64))
        count += 1
    return splitmix64(state ^ count)


def derive_seed(master: int, index: int) -> int:
    """Derive the seed of job ``index`` from a master seed.

    ``derive_seed(m, i) = splitmix64(splitmix64(m) ^ i)``; used for per-tree
    forest seeds, per-task fold seeds and per-job training seeds so results do
    not depend on the order jobs are scheduled in.
    """
    return splitmix64(splitmix64(master & MASK64) ^ (index & MASK64))


def git_blob_hash(content: bytes) -> str:
    """Content hash as ``git hash-object`` computes it for a blob."""
    header = b"blob " + str(len(content)).encode("ascii") + b"\0"
    return hashlib.sha1(header + content).hexdigest()


def file_hash(path: str) -> str:
    with open(path, "rb") as fin:
        return git_blob_hash(fin.read())
