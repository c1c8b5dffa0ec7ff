"""Seeded, splittable random streams with JSON-serializable state for exact replay."""

from __future__ import annotations

import hashlib
import random


class RngStream:
    """Deterministic PRNG wrapper: one seed gives one draw sequence on every platform.

    Streams can be split per purpose (pairing, crossover, mutation, ...) via
    sha256-derived child seeds, and their full state round-trips through JSON
    so checkpointed runs resume mid-sequence.
    """

    def __init__(self, seed: int | str):
        self.seed = str(seed)
        self._rng = random.Random(self.seed)

    def split(self, label: str) -> "RngStream":
        child_seed = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).hexdigest()[:16]
        return RngStream(child_seed)

    def random(self) -> float:
        return self._rng.random()

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    def choice(self, seq):
        return self._rng.choice(seq)

    def gauss(self, mu: float, sigma: float) -> float:
        return self._rng.gauss(mu, sigma)

    def state_doc(self) -> dict:
        version, internal, gauss_next = self._rng.getstate()
        return {
            "seed": self.seed,
            "version": version,
            "state": list(internal),
            "gauss_next": gauss_next,
        }

    @classmethod
    def from_state_doc(cls, doc: dict) -> "RngStream":
        stream = cls(doc["seed"])
        stream._rng.setstate((doc["version"], tuple(doc["state"]), doc["gauss_next"]))
        return stream
