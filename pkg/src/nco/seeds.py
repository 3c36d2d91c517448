"""Deterministic seed derivation.

Every random stream in a run is keyed by the master seed plus a tuple of
tags (purpose, size, epoch, ...), so streams are independent of call order
and stable across processes. Python's ``hash`` is salted per process and is
not used.
"""
import hashlib


def derive_seed(master: int, *tags) -> int:
    key = repr((int(master),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
