"""Named, independently seeded random streams on top of numpy's Philox.

Each stream is keyed by ``(seed, name)`` so a draw from one stream never shifts
another, whatever order the caller consumes them in.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> tuple[int, ...]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_name_key(name))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Lazily created generators, one per name."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        gen = self._gens.get(name)
        if gen is None:
            gen = self._gens[name] = stream(self.seed, name)
        return gen

    def state(self) -> dict:
        out = {}
        for name, gen in sorted(self._gens.items()):
            st = gen.bit_generator.state
            out[name] = {
                "counter": [int(c) for c in st["state"]["counter"]],
                "key": [int(k) for k in st["state"]["key"]],
                "buffer": [int(b) for b in st["buffer"]],
                "buffer_pos": int(st["buffer_pos"]),
                "has_uint32": int(st["has_uint32"]),
                "uinteger": int(st["uinteger"]),
            }
        return {"seed": self.seed, "streams": out}

    @classmethod
    def from_state(cls, state: dict) -> Streams:
        obj = cls(state["seed"])
        for name, st in state["streams"].items():
            gen = obj[name]
            gen.bit_generator.state = {
                "bit_generator": "Philox",
                "state": {"counter": np.array(st["counter"], dtype=np.uint64),
                          "key": np.array(st["key"], dtype=np.uint64)},
                "buffer": np.array(st["buffer"], dtype=np.uint64),
                "buffer_pos": st["buffer_pos"],
                "has_uint32": st["has_uint32"],
                "uinteger": st["uinteger"],
            }
        return obj
