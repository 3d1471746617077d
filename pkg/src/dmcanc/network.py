"""Simulated coefficient exchange: ideal, fixed delay and intermittent regimes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import ConfigError, ContractViolation

IDEAL = "ideal"
DELAY = "delay"
INTERMITTENT = "intermittent"
DEFAULT_CAPACITY = 4096


@dataclass(frozen=True)
class CommPolicy:
    """Which version of a peer's control filter a node sees.

    ``delay`` is in samples, ``rate`` in events per second. Intermittent
    events are per-receiver Bernoulli draws with probability ``rate / fs``
    unless ``periodic`` is set, in which case they fire every ``fs / rate``
    samples (rounded) starting at sample 0.
    """

    variant: str = IDEAL
    fs: float = 16000.0
    delay: int = 0
    rate: float = 0.0
    seed: int = 0
    periodic: bool = False

    def __post_init__(self):
        if self.variant not in (IDEAL, DELAY, INTERMITTENT):
            raise ConfigError(f"unknown communication variant {self.variant!r}")
        if self.delay < 0:
            raise ConfigError(f"delay must be >= 0, got {self.delay}")
        if self.variant == INTERMITTENT and not 0 < self.rate <= self.fs:
            raise ConfigError(f"rate must satisfy 0 < rate <= fs, got {self.rate} at fs={self.fs}")

    @classmethod
    def parse(cls, text: str, fs: float, seed: int = 0) -> "CommPolicy":
        """Parse ``ideal``, ``delay:<samples>`` or ``intermittent:<rate>[:periodic]``."""
        parts = text.strip().lower().split(":")
        try:
            if parts == [IDEAL]:
                return cls(IDEAL, fs, seed=seed)
            if parts[0] == DELAY and len(parts) == 2:
                return cls(DELAY, fs, delay=int(parts[1]), seed=seed)
            if parts[0] == INTERMITTENT and len(parts) in (2, 3):
                periodic = len(parts) == 3
                if periodic and parts[2] != "periodic":
                    raise ValueError(parts[2])
                return cls(INTERMITTENT, fs, rate=float(parts[1]), seed=seed, periodic=periodic)
        except ValueError as exc:
            raise ConfigError(f"bad comm policy {text!r}: {exc}") from None
        raise ConfigError(f"bad comm policy {text!r}; expected ideal | delay:<p> | "
                          "intermittent:<rate>[:periodic]")

    def __str__(self) -> str:
        if self.variant == DELAY:
            return f"delay:{self.delay}"
        if self.variant == INTERMITTENT:
            return f"intermittent:{self.rate:g}" + (":periodic" if self.periodic else "")
        return IDEAL

    @property
    def event_probability(self) -> float:
        return self.rate / self.fs

    def events(self, receiver: int, start: int, count: int) -> np.ndarray:
        """Boolean event flags for samples ``start .. start+count-1`` at ``receiver``.

        Ideal and delay policies deliver every sample. Bernoulli draws come from
        a per-receiver stream, so any chunking of the sample range agrees.
        """
        if self.variant != INTERMITTENT:
            return np.ones(count, dtype=bool)
        n = np.arange(start, start + count)
        if self.periodic:
            period = max(1, int(round(self.fs / self.rate)))
            return n % period == 0
        gen = dsp.rng(self.seed, 10_000 + receiver)
        if start:
            gen.random(start)
        return gen.random(count) < self.event_probability

    def event_matrix(self, n_nodes: int, count: int) -> np.ndarray:
        """(n_nodes, count) uint8 event flags, the layout the simulation kernel takes."""
        return np.array([self.events(k, 0, count) for k in range(n_nodes)], dtype=np.uint8)

    def mean_staleness(self) -> float:
        """Expected steady-state age of a held copy, in samples."""
        if self.variant == DELAY:
            return float(self.delay)
        if self.variant == IDEAL:
            return 0.0
        if self.periodic:
            return (max(1, int(round(self.fs / self.rate))) - 1) / 2.0
        p = self.event_probability
        return (1.0 - p) / p


class CoefficientBus:
    """Per-node history of published control filters.

    Each node keeps its ``capacity + 1`` most recent snapshots so a query of
    age ``capacity`` still resolves. Older queries fall back to the zero
    vector with stamp 0.
    """

    def __init__(self, n_nodes: int, taps: int, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.n_nodes = n_nodes
        self.taps = taps
        self.capacity = capacity
        size = capacity + 1
        self._coeffs = np.zeros((n_nodes, size, taps))
        self._stamps = np.full((n_nodes, size), -1, dtype=np.int64)
        self._latest = np.full(n_nodes, -1, dtype=np.int64)
        self._held = [{m: (np.zeros(taps), 0) for m in range(n_nodes) if m != k}
                      for k in range(n_nodes)]
        self.delivered = np.zeros((n_nodes, n_nodes), dtype=np.int64)
        self._event_cache = {}

    def publish(self, k: int, psi_snapshot, n: int) -> None:
        if n <= self._latest[k]:
            raise ContractViolation(f"node {k} published stamp {n} after {self._latest[k]}")
        psi_snapshot = np.asarray(psi_snapshot, dtype=np.float64)
        if psi_snapshot.shape != (self.taps,):
            raise ContractViolation(f"expected {self.taps} taps, got shape {psi_snapshot.shape}")
        slot = n % (self.capacity + 1)
        self._coeffs[k, slot] = psi_snapshot
        self._stamps[k, slot] = n
        self._latest[k] = n

    def lookup(self, m: int, stamp: int):
        """``(coeffs, stamp)`` published by m at ``stamp``, or the cold-start zero vector."""
        slot = stamp % (self.capacity + 1)
        if stamp >= 0 and self._stamps[m, slot] == stamp:
            return self._coeffs[m, slot].copy(), stamp
        return np.zeros(self.taps), 0

    def _event_at(self, policy: CommPolicy, receiver: int, n: int) -> bool:
        key = (policy, receiver)
        flags = self._event_cache.get(key)
        if flags is None or n >= len(flags):
            size = max(4096, n + 1, 2 * (0 if flags is None else len(flags)))
            flags = self._event_cache[key] = policy.events(receiver, 0, size)
        return bool(flags[n])

    def snapshot(self, policy: CommPolicy, receiver: int, n: int) -> dict:
        """Peer copies ``m -> (coeffs, stamp)`` visible to ``receiver`` at sample n."""
        if policy.variant == INTERMITTENT:
            if self._event_at(policy, receiver, n):
                self._held[receiver] = {m: self.lookup(m, n) for m in self._held[receiver]}
            copies = self._held[receiver]
        else:
            stamp = max(0, n - policy.delay) if policy.variant == DELAY else n
            copies = {m: self.lookup(m, stamp) for m in self._held[receiver]}
        for m, (_, s) in copies.items():
            self.delivered[receiver, m] = s
        return {m: (c.copy(), s) for m, (c, s) in copies.items()}


def stamp_trace(policy: CommPolicy, n_nodes: int, count: int) -> np.ndarray:
    """Delivered version stamp per receiver and sample, shape (n_nodes, count).

    All senders share a stamp at a given receiver because delivery is atomic.
    """
    n = np.arange(count)
    if policy.variant == IDEAL:
        return np.broadcast_to(n, (n_nodes, count)).copy()
    if policy.variant == DELAY:
        return np.broadcast_to(np.maximum(0, n - policy.delay), (n_nodes, count)).copy()
    ev = policy.event_matrix(n_nodes, count).astype(bool)
    # last event index at or before each sample; 0 (cold start) before the first
    idx = np.where(ev, n[None, :], 0)
    return np.maximum.accumulate(idx, axis=1)


@dataclass
class StalenessStats:
    histogram: dict
    mean: float
    per_node_mean: np.ndarray


def staleness_stats(policy: CommPolicy, n_nodes: int, count: int, warmup: int = 0) -> StalenessStats:
    """Histogram of ``n - stamp`` over samples ``warmup .. count-1``.

    Delivery is atomic per receiver, so the per-pair histogram is the same
    for every sender; ``histogram`` maps staleness -> sample count summed over
    receivers.
    """
    stamps = stamp_trace(policy, n_nodes, count)[:, warmup:]
    age = np.arange(warmup, count)[None, :] - stamps
    values, counts = np.unique(age, return_counts=True)
    return StalenessStats(dict(zip(values.tolist(), counts.tolist())), float(age.mean()),
                          age.mean(axis=1))
