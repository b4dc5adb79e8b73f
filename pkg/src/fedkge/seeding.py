"""Counter-based random streams derived from one 64-bit experiment seed.

Every consumer asks for a stream keyed by ``(purpose, client, round)`` so that
adding draws in one subsystem never shifts the numbers seen by another.
"""
import numpy as np

_PURPOSES = {
    "init": 1,
    "select": 2,
    "shuffle": 3,
    "negatives": 4,
    "synth": 5,
    "split": 6,
}

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: str, client: int = 0, round_: int = 0) -> np.random.Generator:
    try:
        tag = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown random stream purpose {purpose!r}") from None
    key = np.random.SeedSequence([int(seed) & _MASK64, tag, int(client), int(round_)])
    return np.random.Generator(np.random.Philox(key))
