"""Counter-based random streams keyed by (trial, step, purpose).

Trials are grouped into blocks of ``block_size`` consecutive trial ids. For a
given block, step and purpose, one Philox generator fills the draws of the
whole block in trial order, so the values seen by trial ``t`` never depend on
how many trials are simulated together or on how work is split across
threads. Streams are pure functions of their key: asking twice for the same
(block, step, purpose) returns the same numbers.

Purposes are strings. A base name such as ``"bernoulli"`` may carry an index,
``"midpoint_gaussian:3"``, giving an independent family of streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_PURPOSES = {
    "endpoint_gaussian": 1,
    "midpoint_gaussian": 2,
    "bernoulli": 3,
    "midpoint_time": 4,
    "diffusion_gaussian": 5,
    "initial": 6,
    "reference": 7,
}
_INDEX_BITS = 20


def purpose_code(purpose: str) -> int:
    """Integer code of a purpose string, ``base << 20 | index``."""
    name, _, index = purpose.partition(":")
    if name not in BASE_PURPOSES:
        raise ValueError(f"unknown random-stream purpose {purpose!r}")
    idx = int(index) if index else 0
    if not 0 <= idx < (1 << _INDEX_BITS):
        raise ValueError(f"purpose index out of range in {purpose!r}")
    return (BASE_PURPOSES[name] << _INDEX_BITS) | idx


@dataclass(frozen=True)
class RngPolicy:
    """Master seed plus the trial-block layout of derived streams."""

    master_seed: int
    block_size: int = 16384
    _keys: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def key(self, block: int, purpose: str) -> np.ndarray:
        code = purpose_code(purpose)
        cached = self._keys.get((block, code))
        if cached is None:
            seq = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(block), code))
            cached = seq.generate_state(2, np.uint64)
            self._keys[(block, code)] = cached
        return cached

    def generator(self, block: int, step: int, purpose: str) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.key(block, purpose), counter=[0, int(step), 0, 0])
        return np.random.Generator(bitgen)

    def draws(self, trial_start: int, n_rows: int, step: int) -> "StreamDraws":
        return StreamDraws(self, trial_start, n_rows, step)


class StreamDraws:
    """All random draws for rows ``trial_start .. trial_start+n_rows-1`` at one step.

    ``trial_start`` must be a multiple of the policy's block size so that each
    block is filled from its first trial.
    """

    def __init__(self, policy: RngPolicy, trial_start: int, n_rows: int, step: int):
        if trial_start % policy.block_size:
            raise ValueError("trial_start must be aligned to the block size")
        self.policy = policy
        self.trial_start = int(trial_start)
        self.n_rows = int(n_rows)
        self.step = int(step)

    def _blocks(self):
        bs = self.policy.block_size
        first = self.trial_start // bs
        row = 0
        while row < self.n_rows:
            take = min(bs, self.n_rows - row)
            yield first + row // bs, row, take
            row += take

    def _fill(self, purpose, width, rows, sampler):
        pieces = []
        for block, row, take in self._blocks():
            count = take if rows is None else int(np.count_nonzero(rows[row:row + take]))
            if count == 0:
                continue
            gen = self.policy.generator(block, self.step, purpose)
            pieces.append(sampler(gen, (count, width)))
        if not pieces:
            return np.empty((0, width))
        return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)

    def normal(self, purpose: str, width: int, rows=None) -> np.ndarray:
        """Standard normals, shape (n_rows, width) or (rows.sum(), width)."""
        return self._fill(purpose, width, rows, lambda g, shape: g.standard_normal(shape))

    def uniform(self, purpose: str, width: int, rows=None) -> np.ndarray:
        """Uniforms on [0, 1), shape (n_rows, width) or (rows.sum(), width)."""
        return self._fill(purpose, width, rows, lambda g, shape: g.random(shape))

    def bernoulli(self, purpose: str, width: int, prob: float, rows=None) -> np.ndarray:
        return self.uniform(purpose, width, rows) < prob


class ForcedDraws:
    """Draw source that returns fixed values for chosen purposes.

    ``values`` maps a purpose (exact string, or its base name to cover every
    index) to a scalar or an array broadcastable to ``(n_rows, width)``.
    Purposes not listed are taken from ``fallback``, or are zero when there is
    no fallback.
    """

    def __init__(self, values: dict, n_rows: int, fallback=None):
        self.values = dict(values)
        self.n_rows = int(n_rows)
        self.fallback = fallback

    def _lookup(self, purpose):
        if purpose in self.values:
            return self.values[purpose]
        return self.values.get(purpose.partition(":")[0])

    def _get(self, purpose, width, rows, method, *extra):
        forced = self._lookup(purpose)
        if forced is None:
            if self.fallback is not None:
                return getattr(self.fallback, method)(purpose, width, *extra, rows=rows)
            forced = 0.0
        full = np.broadcast_to(np.asarray(forced, dtype=float), (self.n_rows, width))
        return np.array(full if rows is None else full[rows])

    def normal(self, purpose, width, rows=None):
        return self._get(purpose, width, rows, "normal")

    def uniform(self, purpose, width, rows=None):
        return self._get(purpose, width, rows, "uniform")

    def bernoulli(self, purpose, width, prob, rows=None):
        forced = self._lookup(purpose)
        if forced is None and self.fallback is not None:
            return self.fallback.bernoulli(purpose, width, prob, rows=rows)
        return self._get(purpose, width, rows, "uniform").astype(bool)
