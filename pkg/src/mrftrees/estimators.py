"""Rao-Blackwellised and histogram estimators of node beliefs and means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EstimatorError(ValueError):
    pass


@dataclass
class RbAccumulator:
    """Running sums for both estimators of one chain.

    ``rb_sums[i]`` accumulates exact conditional marginals, ``mc_counts[i]``
    the sampled labels.  ``n_rb`` and ``n_mc`` count the two kinds of update;
    an augmentation chain feeds both once per sample, a plain Gibbs chain
    without per-site Rao-Blackwellisation only the histogram.  ``T`` is the
    sample count, the larger of the two.
    """

    n_nodes: int
    n_states: int
    state_values: np.ndarray | None = None
    rb_sums: np.ndarray = field(init=False, repr=False)
    mc_counts: np.ndarray = field(init=False, repr=False)
    n_rb: int = field(init=False, default=0)
    n_mc: int = field(init=False, default=0)

    def __post_init__(self):
        self.rb_sums = np.zeros((self.n_nodes, self.n_states))
        self.mc_counts = np.zeros((self.n_nodes, self.n_states), dtype=np.int64)
        if self.state_values is None:
            self.state_values = np.arange(self.n_states, dtype=float)
        self.state_values = np.asarray(self.state_values, dtype=float)
        if self.state_values.shape != (self.n_states,):
            raise EstimatorError("state_values must have one entry per state")
        self._rows = np.arange(self.n_nodes)

    @property
    def T(self) -> int:
        return max(self.n_rb, self.n_mc)

    @classmethod
    def for_model(cls, mrf, state_values=None) -> "RbAccumulator":
        return cls(mrf.n_nodes, mrf.n_states, state_values)

    def add_marginals(self, marginals: np.ndarray) -> None:
        if marginals.shape != self.rb_sums.shape:
            raise EstimatorError(f"expected marginals of shape {self.rb_sums.shape}, got {marginals.shape}")
        self.rb_sums += marginals
        self.n_rb += 1

    def add_state(self, x: np.ndarray) -> None:
        self.mc_counts[self._rows, x] += 1
        self.n_mc += 1

    def merge(self, other: "RbAccumulator") -> "RbAccumulator":
        if other.rb_sums.shape != self.rb_sums.shape:
            raise EstimatorError("cannot merge accumulators of different shapes")
        out = RbAccumulator(self.n_nodes, self.n_states, self.state_values)
        out.rb_sums = self.rb_sums + other.rb_sums
        out.mc_counts = self.mc_counts + other.mc_counts
        out.n_mc = self.n_mc + other.n_mc
        out.n_rb = self.n_rb + other.n_rb
        return out


def rb_accumulate(acc: RbAccumulator, record) -> RbAccumulator:
    """Add one augmentation step's conditional marginals."""
    acc.add_marginals(record.marginals)
    return acc


def mc_accumulate(acc: RbAccumulator, state) -> RbAccumulator:
    x = np.asarray(getattr(state, "assignment", state), dtype=np.int64)
    if x.shape != (acc.n_nodes,) or x.min() < 0 or x.max() >= acc.n_states:
        raise EstimatorError("state does not match the accumulator")
    acc.add_state(x)
    return acc


def belief_estimate(acc: RbAccumulator, kind: str = "rb") -> np.ndarray:
    """``rb_sums / n_rb`` (``kind="rb"``) or ``mc_counts / n_mc`` (``"mc"``)."""
    if kind == "rb":
        if acc.n_rb == 0:
            raise EstimatorError("no Rao-Blackwellised samples accumulated")
        return acc.rb_sums / acc.n_rb
    if kind == "mc":
        if acc.n_mc == 0:
            raise EstimatorError("no samples accumulated")
        return acc.mc_counts / acc.n_mc
    raise ValueError(f"unknown estimator kind {kind!r}")


def best_beliefs(acc: RbAccumulator) -> np.ndarray:
    """Rao-Blackwellised beliefs when available, else the histogram."""
    return belief_estimate(acc, "rb" if acc.n_rb else "mc")


def mean_estimate(acc: RbAccumulator, kind: str = "rb") -> np.ndarray:
    return belief_estimate(acc, kind) @ acc.state_values


def map_reconstruction(beliefs: np.ndarray, shape=None) -> np.ndarray:
    """Per-node argmax; ties go to the lowest label."""
    labels = np.argmax(np.asarray(beliefs), axis=-1)
    return labels.reshape(shape) if shape is not None else labels


def reconstruction_error(labels, truth) -> float:
    labels = np.asarray(labels).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if labels.shape != truth.shape:
        raise EstimatorError("label grids differ in size")
    return float(np.mean(labels != truth))
