"""Channel states, fading ensembles, the AWGN MIMO channel and the log-det functional.

A channel state is an ``(n_rx, n_tx)`` complex matrix; blocks of symbols are
stored column-wise, ``(n_tx, n)`` on the input side and ``(n_rx, n)`` on the
output side. All rates are in bits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

PSD_TOL = 1e-10
PROB_TOL = 1e-12


def as_state(entries, n_rx: int | None = None, n_tx: int | None = None) -> np.ndarray:
    """Validate and freeze a channel state matrix."""
    g = np.array(entries, dtype=complex, copy=True)
    if g.ndim == 0:
        g = g.reshape(1, 1)
    if g.ndim != 2:
        raise ValueError(f"channel state must be a matrix, got shape {g.shape}")
    if n_rx is not None and g.shape[0] != n_rx or n_tx is not None and g.shape[1] != n_tx:
        raise ValueError(f"channel state shape {g.shape} != ({n_rx}, {n_tx})")
    if not np.all(np.isfinite(g)):
        raise ValueError("channel state has non-finite entries")
    g.setflags(write=False)
    return g


def check_covariance(q, power: float | None = None, tol: float = PSD_TOL) -> np.ndarray:
    """Return ``q`` as a complex matrix after checking it lies in Q_P.

    Raises ``ValueError`` when ``q`` is not Hermitian, not PSD, or (with
    ``power`` given) has trace above the budget.
    """
    q = np.atleast_2d(np.asarray(q, dtype=complex))
    if q.shape[0] != q.shape[1]:
        raise ValueError(f"covariance must be square, got {q.shape}")
    if np.max(np.abs(q - q.conj().T), initial=0.0) > tol:
        raise ValueError("covariance is not Hermitian")
    if np.linalg.eigvalsh((q + q.conj().T) / 2).min() < -tol:
        raise ValueError("covariance is not positive semi-definite")
    if power is not None and np.trace(q).real > power + tol:
        raise ValueError(f"covariance trace {np.trace(q).real:.6g} exceeds power {power}")
    return q


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class RayleighIid:
    """i.i.d. CN(0, scale**2) entries."""

    n_rx: int
    n_tx: int
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0 or self.n_rx < 1 or self.n_tx < 1:
            raise ValueError("RayleighIid needs positive scale and dimensions")


@dataclass(frozen=True)
class PointMass:
    state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state", as_state(self.state))

    @property
    def n_rx(self) -> int:
        return self.state.shape[0]

    @property
    def n_tx(self) -> int:
        return self.state.shape[1]


@dataclass(frozen=True)
class FiniteSupport:
    states: tuple
    probs: np.ndarray

    def __post_init__(self):
        states = tuple(as_state(s) for s in self.states)
        if not states:
            raise ValueError("FiniteSupport needs at least one state")
        if len({s.shape for s in states}) != 1:
            raise ValueError("all support states must share (n_rx, n_tx)")
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(states),):
            raise ValueError("one probability per state required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "probs", probs)

    @property
    def n_rx(self) -> int:
        return self.states[0].shape[0]

    @property
    def n_tx(self) -> int:
        return self.states[0].shape[1]


@dataclass(frozen=True)
class Empirical:
    """Uniform distribution over a list of observed states."""

    samples: tuple

    def __post_init__(self):
        samples = tuple(as_state(s) for s in self.samples)
        if not samples:
            raise ValueError("Empirical ensemble needs at least one sample")
        if len({s.shape for s in samples}) != 1:
            raise ValueError("all samples must share (n_rx, n_tx)")
        object.__setattr__(self, "samples", samples)

    @property
    def n_rx(self) -> int:
        return self.samples[0].shape[0]

    @property
    def n_tx(self) -> int:
        return self.samples[0].shape[1]


FadingEnsemble = Union[RayleighIid, PointMass, FiniteSupport, Empirical]


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with E|x|^2 = variance."""
    s = np.sqrt(variance / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


def sample_states(ensemble: FadingEnsemble, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` states as an array of shape ``(size, n_rx, n_tx)``."""
    shape = (size, ensemble.n_rx, ensemble.n_tx)
    if isinstance(ensemble, RayleighIid):
        return complex_normal(rng, shape, ensemble.scale**2)
    if isinstance(ensemble, PointMass):
        return np.broadcast_to(ensemble.state, shape).copy()
    if isinstance(ensemble, FiniteSupport):
        idx = rng.choice(len(ensemble.states), size=size, p=ensemble.probs)
        return np.stack(ensemble.states)[idx]
    if isinstance(ensemble, Empirical):
        idx = rng.integers(0, len(ensemble.samples), size=size)
        return np.stack(ensemble.samples)[idx]
    raise TypeError(f"unknown ensemble {type(ensemble).__name__}")


def sample_state(ensemble: FadingEnsemble, rng: np.random.Generator) -> np.ndarray:
    return as_state(sample_states(ensemble, rng, 1)[0])


def load_empirical_csv(path: str | Path) -> Empirical:
    """Read an empirical ensemble.

    The header row is ``n_rx,n_tx``; every following row holds one state as
    interleaved ``re,im`` values in row-major order.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty ensemble file")
    try:
        n_rx, n_tx = (int(v) for v in rows[0][:2])
    except ValueError:
        # header may carry names, with dimensions on the next row
        n_rx, n_tx = (int(v) for v in rows[1][:2])
        rows = rows[1:]
    states = []
    for lineno, row in enumerate(rows[1:], start=2):
        vals = np.array([float(v) for v in row if v.strip() != ""])
        if vals.size != 2 * n_rx * n_tx:
            raise ValueError(f"{path}:{lineno}: expected {2 * n_rx * n_tx} values, got {vals.size}")
        states.append((vals[0::2] + 1j * vals[1::2]).reshape(n_rx, n_tx))
    return Empirical(tuple(states))


def write_empirical_csv(path: str | Path, states: Sequence[np.ndarray]) -> None:
    states = [as_state(s) for s in states]
    n_rx, n_tx = states[0].shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([n_rx, n_tx])
        for s in states:
            flat = s.reshape(-1)
            w.writerow([repr(float(v)) for pair in zip(flat.real, flat.imag) for v in pair])


# ---------------------------------------------------------------------------
# channel operations


def apply_channel(g, t, sigma_sq: float, rng: np.random.Generator | None = None,
                  noiseless: bool = False) -> np.ndarray:
    """Pass an input block ``t`` (n_tx x n) through ``z = g t + xi``."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    t = np.asarray(t, dtype=complex)
    if t.ndim == 1:
        t = t.reshape(g.shape[1], -1) if g.shape[1] > 1 else t.reshape(1, -1)
    if t.shape[0] != g.shape[1]:
        raise ValueError(f"input block has {t.shape[0]} rows, channel expects {g.shape[1]}")
    z = g @ t
    if noiseless:
        return z
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    if rng is None:
        raise ValueError("a generator is required unless noiseless=True")
    return z + complex_normal(rng, z.shape, sigma_sq)


def _logdet2(m: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(m)
        return float(2.0 * np.sum(np.log2(np.diag(chol).real)))
    except np.linalg.LinAlgError:
        lam = np.clip(np.linalg.eigvalsh(m), 1.0, None)
        return float(np.sum(np.log2(lam)))


def log_det_mi(g, q, sigma_sq: float) -> float:
    """log2 det(I + g q g^H / sigma_sq) in bits per channel use."""
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    q = check_covariance(q)
    if q.shape[0] != g.shape[1]:
        raise ValueError(f"covariance is {q.shape}, channel has {g.shape[1]} inputs")
    m = np.eye(g.shape[0]) + (g @ q @ g.conj().T) / sigma_sq
    return max(_logdet2((m + m.conj().T) / 2), 0.0)


def log_det_mi_batch(grams: np.ndarray, q: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Vectorised f(g, q) over precomputed Gram matrices ``g^H g`` (N, n_tx, n_tx).

    Uses det(I + g q g^H) = det(I + q g^H g).
    """
    n_tx = q.shape[0]
    if n_tx == 1:
        return np.log2(1.0 + grams[:, 0, 0].real * q[0, 0].real / sigma_sq)
    if n_tx == 2:
        # det(I + M) = 1 + tr M + det M for 2x2 M = A q / s
        tr = np.einsum("nij,ji->n", grams, q).real / sigma_sq
        det_a = (grams[:, 0, 0] * grams[:, 1, 1] - grams[:, 0, 1] * grams[:, 1, 0]).real
        det_q = (q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0]).real
        return np.log2(np.maximum(1.0 + tr + det_a * det_q / sigma_sq**2, 1.0))
    m = np.eye(n_tx) + grams @ q / sigma_sq
    sign, logabs = np.linalg.slogdet(m)
    return np.maximum(logabs / np.log(2.0), 0.0)


def gram(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=complex)
    return np.conj(np.swapaxes(states, -1, -2)) @ states


def operator_norm(g) -> float:
    """Largest singular value."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    if g.size == 0:
        return 0.0
    return float(np.linalg.norm(g, 2))


def waterfilling(gains: np.ndarray, power: float) -> np.ndarray:
    """Power split maximising sum log2(1 + gains * p) under sum p = power.

    ``gains`` are nonnegative channel-to-noise ratios. Zero gains get zero power
    unless every gain is zero, in which case the budget is spread evenly.
    """
    gains = np.asarray(gains, dtype=float)
    p = np.zeros_like(gains)
    active = np.flatnonzero(gains > 0)
    if active.size == 0:
        return np.full_like(gains, power / gains.size)
    order = active[np.argsort(-gains[active])]
    inv = 1.0 / gains[order]
    for k in range(order.size, 0, -1):
        level = (power + inv[:k].sum()) / k
        if level > inv[k - 1]:
            p[order[:k]] = level - inv[:k]
            break
    return p


def waterfilling_capacity(g, power: float, sigma_sq: float) -> tuple[np.ndarray, float]:
    """Optimal input covariance for a known state and the resulting rate."""
    if power <= 0:
        raise ValueError("power must be positive")
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    lam, vecs = np.linalg.eigh(g.conj().T @ g)
    lam = np.clip(lam, 0.0, None)
    p = waterfilling(lam / sigma_sq, power)
    q = (vecs * p) @ vecs.conj().T
    q = (q + q.conj().T) / 2
    return q, float(np.sum(np.log2(1.0 + lam * p / sigma_sq)))
