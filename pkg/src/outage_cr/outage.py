"""eta-outage capacity of a MIMO slow-fading channel.

The outage probability of an input covariance Q at rate R is the probability
that the state falls in {g : f(g, Q) < R}. All probabilities are taken over a
fixed pool of states drawn once per query, so the objective is deterministic
in (Q, R) and bisection over R is well posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .channel import (
    Empirical,
    FadingEnsemble,
    FiniteSupport,
    PointMass,
    RayleighIid,
    check_covariance,
    gram,
    log_det_mi_batch,
    sample_states,
)
from .rng import parallel_map, split

QUANTILE_TOL = 1e-12


@dataclass(frozen=True)
class OutageSpec:
    eta: float
    power: float
    sigma_sq: float = 1.0
    n_state_samples: int = 100_000
    confidence: float = 0.95
    restarts: int = 8
    bisection_tol: float = 1e-3
    bisection_max_iter: int = 40
    max_fev: int = 400
    outage_max_fev: int = 150
    smooth: bool = False
    smooth_width: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if self.power <= 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if self.sigma_sq <= 0:
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")
        if self.n_state_samples < 1:
            raise ValueError("n_state_samples must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass
class CapacityEstimate:
    value_bits: float
    lower_bracket: float
    upper_bracket: float
    argmax_q: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class StatePool:
    """States with probability weights.

    ``exact`` pools enumerate a discrete law (point mass, finite support,
    empirical); sampled pools carry uniform weights and a Monte Carlo error.
    """

    states: np.ndarray
    weights: np.ndarray
    exact: bool

    def __len__(self):
        return self.states.shape[0]

    def mass(self, mask: np.ndarray) -> float:
        """Probability of a boolean event; counts directly when weights are uniform."""
        if not self.exact or np.all(self.weights == self.weights[0]):
            return np.count_nonzero(mask) / len(self)
        return float(np.dot(self.weights, mask))

    @property
    def n_tx(self) -> int:
        return self.states.shape[2]


def draw_pool(ensemble: FadingEnsemble, n_samples: int, rng: np.random.Generator) -> StatePool:
    """Build the common-random-numbers pool for one capacity query."""
    if isinstance(ensemble, PointMass):
        return StatePool(ensemble.state[None].copy(), np.ones(1), True)
    if isinstance(ensemble, FiniteSupport):
        keep = ensemble.probs > 0
        states = np.stack(ensemble.states)[keep]
        return StatePool(states, ensemble.probs[keep] / ensemble.probs[keep].sum(), True)
    if isinstance(ensemble, Empirical):
        states = np.stack(ensemble.samples)
        return StatePool(states, np.full(len(states), 1.0 / len(states)), True)
    states = sample_states(ensemble, rng, n_samples)
    return StatePool(states, np.full(n_samples, 1.0 / n_samples), False)


def wilson_half_width(p: float, n: int, confidence: float = 0.95) -> float:
    """Half-width of the Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    z = stats.norm.ppf(0.5 + confidence / 2)
    denom = 1 + z * z / n
    return float(z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)))


def upper_quantile(values: np.ndarray, eta: float, weights: np.ndarray | None = None) -> float:
    """Smallest v with P[X <= v] > eta, i.e. sup{r : P[X < r] <= eta}."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if weights is None:
        k = min(int(math.floor(eta * values.size + 1e-9)), values.size - 1)
        return float(np.partition(values, k)[k])
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(np.asarray(weights, dtype=float)[order])
    k = int(np.searchsorted(cum, eta + QUANTILE_TOL, side="right"))
    return float(values[order[min(k, values.size - 1)]])


class _PoolObjective:
    """Cached per-pool quantities shared by every Q evaluation."""

    def __init__(self, pool: StatePool, power: float, sigma_sq: float):
        self.pool = pool
        self.grams = gram(pool.states)
        self.power = power
        self.sigma_sq = sigma_sq
        self.uniform = not pool.exact or np.allclose(pool.weights, pool.weights[0], rtol=0, atol=0)
        self.n_evals = 0

    def f(self, q: np.ndarray) -> np.ndarray:
        if np.trace(q).real > self.power + 1e-10:
            raise AssertionError("optimizer evaluated a covariance above the power budget")
        self.n_evals += 1
        if self.pool.n_tx == 2:
            return self._f2(q)
        return log_det_mi_batch(self.grams, q, self.sigma_sq)

    def _f2(self, q: np.ndarray) -> np.ndarray:
        if not hasattr(self, "_a2"):
            a = self.grams
            self._a2 = (a[:, 0, 0].real.copy(), a[:, 1, 1].real.copy(), a[:, 0, 1].real.copy(),
                        a[:, 0, 1].imag.copy(),
                        (a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]).real)
        a00, a11, a01r, a01i, det_a = self._a2
        s = self.sigma_sq
        # tr(A q) for Hermitian A, q
        tr = a00 * q[0, 0].real + a11 * q[1, 1].real + 2.0 * (a01r * q[1, 0].real - a01i * q[1, 0].imag)
        det_q = (q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0]).real
        return np.log2(np.maximum(1.0 + tr / s + det_a * (det_q / (s * s)), 1.0))

    def outage(self, q: np.ndarray, rate: float) -> float:
        return self.pool.mass(self.f(q) < rate)

    def quantile(self, q: np.ndarray, eta: float) -> float:
        w = None if self.uniform else self.pool.weights
        return upper_quantile(self.f(q), eta, w)


# ---------------------------------------------------------------------------
# covariance parametrisation: Q = P * L L^H / tr(L L^H), L lower triangular


def _n_params(n_tx: int) -> int:
    return n_tx * n_tx


@lru_cache(maxsize=None)
def _tril(n_tx: int):
    rows, cols = np.tril_indices(n_tx, -1)
    return np.arange(n_tx), rows, cols


def params_to_cov(x: np.ndarray, n_tx: int, power: float) -> np.ndarray:
    L = np.zeros((n_tx, n_tx), dtype=complex)
    diag, rows, cols = _tril(n_tx)
    L[diag, diag] = x[:n_tx]
    m = rows.size
    L[rows, cols] = x[n_tx:n_tx + m] + 1j * x[n_tx + m:n_tx + 2 * m]
    q = L @ L.conj().T
    tr = np.trace(q).real
    if tr <= 1e-300:
        return np.eye(n_tx, dtype=complex) * (power / n_tx)
    q = q * (power / tr)
    return (q + q.conj().T) / 2


def cov_to_params(q: np.ndarray) -> np.ndarray:
    n_tx = q.shape[0]
    lam, vecs = np.linalg.eigh((q + q.conj().T) / 2)
    lam = np.clip(lam, 0.0, None)
    # square root factor then QR to lower-triangular form with real diagonal
    root = vecs * np.sqrt(lam)
    _, r = np.linalg.qr(root.conj().T)
    L = r.conj().T
    phase = np.exp(-1j * np.angle(np.where(np.abs(np.diag(L)) > 0, np.diag(L), 1.0)))
    L = L * phase[None, :]
    rows, cols = np.tril_indices(n_tx, -1)
    off = L[rows, cols]
    return np.concatenate([np.diag(L).real, off.real, off.imag])


def _start_points(n_tx: int, power: float, restarts: int, rng: np.random.Generator,
                  warm: list | None = None) -> list[np.ndarray]:
    """Isotropic, warm starts, unit-vector beamformers, random beamformer, random factors."""
    starts = [np.eye(n_tx, dtype=complex) * (power / n_tx)]
    starts += [check_covariance(w) * (power / max(np.trace(w).real, 1e-300)) for w in (warm or [])]
    for k in range(n_tx):
        e = np.zeros(n_tx, dtype=complex)
        e[k] = 1.0
        starts.append(power * np.outer(e, e))
    v = rng.standard_normal(n_tx) + 1j * rng.standard_normal(n_tx)
    v /= np.linalg.norm(v)
    starts.append(power * np.outer(v, v.conj()))
    base = len(starts)
    while len(starts) < max(restarts, base + 1) + len(warm or []):
        L = np.tril(rng.standard_normal((n_tx, n_tx)) + 1j * rng.standard_normal((n_tx, n_tx)))
        q = L @ L.conj().T
        starts.append(q * (power / np.trace(q).real))
    return starts


def _nelder_mead(fun, x0: np.ndarray, max_fev: int, step: float):
    d = x0.size
    simplex = np.vstack([x0] + [x0 + step * np.eye(d)[i] for i in range(d)])
    return optimize.minimize(fun, x0, method="Nelder-Mead",
                             options={"initial_simplex": simplex, "maxfev": max_fev,
                                      "xatol": 1e-6, "fatol": 1e-9})


# ---------------------------------------------------------------------------
# public operations


def outage_probability(q, rate: float, pool: StatePool, sigma_sq: float,
                       confidence: float = 0.95, power: float | None = None) -> tuple[float, float]:
    """Fraction of pool states with f(g, q) < rate and its Wilson half-width.

    Exact pools (discrete laws) have zero half-width.
    """
    if len(pool) == 0:
        raise ValueError("empty state pool")
    q = check_covariance(q, power)
    f = log_det_mi_batch(gram(pool.states), q, sigma_sq)
    p = pool.mass(f < rate)
    if pool.exact:
        return p, 0.0
    return p, wilson_half_width(p, len(pool), confidence)


def rate_for_q(q, eta: float, pool: StatePool, sigma_sq: float) -> float:
    """Largest rate whose outage under q does not exceed eta."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    q = check_covariance(q)
    f = log_det_mi_batch(gram(pool.states), q, sigma_sq)
    uniform = not pool.exact or np.all(pool.weights == pool.weights[0])
    return upper_quantile(f, eta, None if uniform else pool.weights)


def _maximise_rate(obj: _PoolObjective, eta: float, spec: OutageSpec, rng, warm=None,
                   threads: int = 1) -> list[tuple[float, np.ndarray]]:
    """Multi-start search for max_Q rate_for_q; returns (rate, Q) sorted best first."""
    n_tx = obj.pool.n_tx
    power = spec.power
    if n_tx == 1:
        q = np.array([[power]], dtype=complex)
        return [(obj.quantile(q, eta), q)]
    starts = _start_points(n_tx, power, spec.restarts, rng, warm)

    def run(q0):
        x0 = cov_to_params(q0)
        res = _nelder_mead(lambda x: -obj.quantile(params_to_cov(x, n_tx, power), eta),
                           x0, spec.max_fev, 0.25 * math.sqrt(power / n_tx))
        best_q = params_to_cov(res.x, n_tx, power)
        return obj.quantile(best_q, eta), best_q

    found = parallel_map(run, starts, threads)
    found += [(obj.quantile(q, eta), q) for q in starts]
    found.sort(key=lambda item: -item[0])
    return found


def min_outage_over_q(rate: float, spec: OutageSpec, pool: StatePool, rng: np.random.Generator,
                      warm_starts: list | None = None, stop_at: float | None = None,
                      _obj: _PoolObjective | None = None) -> tuple[np.ndarray, float]:
    """Approximate inf over Q_P of the outage probability at ``rate``.

    Multi-start Nelder-Mead on the Cholesky factor of Q. With ``stop_at`` the
    search returns as soon as a covariance reaches that outage level.
    """
    obj = _obj or _PoolObjective(pool, spec.power, spec.sigma_sq)
    n_tx = pool.n_tx
    power = spec.power
    if n_tx == 1:
        q = np.array([[power]], dtype=complex)
        return q, obj.outage(q, rate)

    best_q, best_p = None, math.inf
    for q0 in _start_points(n_tx, power, spec.restarts, rng, warm_starts):
        p0 = obj.outage(q0, rate)
        if p0 < best_p:
            best_q, best_p = q0, p0
        if stop_at is not None and best_p <= stop_at:
            return best_q, best_p
    for q0 in _start_points(n_tx, power, spec.restarts, rng, warm_starts):
        x0 = cov_to_params(q0)
        res = _nelder_mead(lambda x: obj.outage(params_to_cov(x, n_tx, power), rate),
                           x0, spec.outage_max_fev, 0.25 * math.sqrt(power / n_tx))
        q = params_to_cov(res.x, n_tx, power)
        p = obj.outage(q, rate)
        if spec.smooth:
            w = spec.smooth_width
            res = _nelder_mead(
                lambda x: float(np.dot(obj.pool.weights,
                                       _sigmoid((rate - obj.f(params_to_cov(x, n_tx, power))) / w))),
                cov_to_params(q), spec.outage_max_fev, 0.1 * math.sqrt(power / n_tx))
            q2 = params_to_cov(res.x, n_tx, power)
            p2 = obj.outage(q2, rate)
            if p2 < p:
                q, p = q2, p2
        if p < best_p:
            best_q, best_p = q, p
        if stop_at is not None and best_p <= stop_at:
            break
    return best_q, best_p


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _rate_upper_bound(obj: _PoolObjective, eta: float) -> float:
    # f(g, Q) <= log2 det(I + P g^H g / s) for every Q in Q_P, since Q <= P I
    full = np.eye(obj.pool.n_tx, dtype=complex) * obj.power
    ceiling = log_det_mi_batch(obj.grams, full, obj.sigma_sq)
    w = None if obj.uniform else obj.pool.weights
    return upper_quantile(ceiling, eta, w) + 1e-9


def eta_outage_capacity(ensemble: FadingEnsemble, spec: OutageSpec, rng: np.random.Generator,
                        pool: StatePool | None = None, warm_starts: list | None = None,
                        threads: int = 1) -> CapacityEstimate:
    """sup{R : inf_Q P[f(G, Q) < R] <= eta}, estimated on a common state pool.

    The inner infimum is approximated by multi-start search; the outer
    supremum by bisection. The quantile characterisation max_Q R(Q) is
    computed alongside and the larger of the two is reported.
    """
    rng_pool, rng_rate, rng_bisect = split(rng, 3)
    if pool is None:
        pool = draw_pool(ensemble, spec.n_state_samples, rng_pool)
    obj = _PoolObjective(pool, spec.power, spec.sigma_sq)

    found = _maximise_rate(obj, spec.eta, spec, rng_rate, warm_starts, threads)
    quantile_best, q_best = found[0]
    warm = [q for _, q in found[:3]]

    # R(q_best) is certified feasible: outage(q_best, R(q_best)) <= eta
    lo, hi = quantile_best, max(_rate_upper_bound(obj, spec.eta), quantile_best + 1e-9)
    lo_q = q_best
    iterations = 0
    if hi - lo > spec.bisection_tol:
        while hi - lo > spec.bisection_tol and iterations < spec.bisection_max_iter:
            mid = 0.5 * (lo + hi)
            q_mid, p_mid = min_outage_over_q(mid, spec, pool, rng_bisect, warm, stop_at=spec.eta,
                                             _obj=obj)
            if p_mid <= spec.eta + QUANTILE_TOL:
                lo, lo_q = mid, q_mid
                warm = [q_mid] + warm[:2]
            else:
                hi = mid
            iterations += 1

    candidates = [q for _, q in found[:5]] + [lo_q]
    rates = [obj.quantile(q, spec.eta) for q in candidates]
    k = int(np.argmax(rates))
    value = max(lo, rates[k])
    half = 0.0
    if not pool.exact:
        p_at = obj.outage(candidates[k], rates[k])
        half = wilson_half_width(min(max(p_at, spec.eta), 1.0), len(pool), spec.confidence)
    diag = {
        "samples": len(pool),
        "exact_pool": pool.exact,
        "restarts": spec.restarts,
        "bisection_iterations": iterations,
        "bisection_value": lo,
        "quantile_value": quantile_best,
        "disagreement": abs(lo - quantile_best) > spec.bisection_tol,
        "ci_half_width": half,
        "evaluations": obj.n_evals,
    }
    return CapacityEstimate(value, min(lo, value), max(hi, value), candidates[k], diag,
                            candidates)


def capacity_sweep(ensemble: FadingEnsemble, spec: OutageSpec, etas, powers,
                   rng: np.random.Generator, threads: int = 1) -> list[dict]:
    """eta-outage capacity over an (eta, P) grid on one shared state pool.

    Covariance shapes found anywhere on the grid are re-scored at every grid
    point, so the reported values are nondecreasing in eta and in P.
    """
    rng_pool, rng_runs = split(rng, 2)
    pool = draw_pool(ensemble, spec.n_state_samples, rng_pool)
    grid = [(float(e), float(p)) for p in powers for e in etas]
    run_rngs = split(rng_runs, len(grid))
    shapes: list[np.ndarray] = []
    results = []
    for (eta, power), r in zip(grid, run_rngs):
        sub = OutageSpec(**{**spec.__dict__, "eta": eta, "power": power})
        warm = [s * power for s in shapes[-4:]]
        est = eta_outage_capacity(ensemble, sub, r, pool=pool, warm_starts=warm, threads=threads)
        shapes += [q / np.trace(q).real for q in est.candidates]
        results.append({"eta": eta, "power": power, "estimate": est})
    objs = {}
    for row in results:
        power = row["power"]
        obj = objs.setdefault(power, _PoolObjective(pool, power, spec.sigma_sq))
        est = row["estimate"]
        rescored = max(obj.quantile(s * power, row["eta"]) for s in shapes)
        if rescored > est.value_bits:
            est.diagnostics["rescored_from"] = est.value_bits
            est.value_bits = rescored
            est.upper_bracket = max(est.upper_bracket, rescored)
    return results


# ---------------------------------------------------------------------------
# single antenna closed form


def rayleigh_gain_quantile(eta: float, scale: float = 1.0) -> float:
    """gamma_0 for |G| with CDF 1 - exp(-gamma^2 / scale^2)."""
    return scale * math.sqrt(-math.log1p(-eta))


def siso_outage_capacity(eta: float, power: float, sigma_sq: float,
                         ensemble: FadingEnsemble | None = None, gain_quantile=None,
                         n_samples: int = 100_000, rng: np.random.Generator | None = None) -> float:
    """log2(1 + P gamma_0^2 / sigma^2) with gamma_0 = sup{g : P[|G| < g] <= eta}.

    ``gain_quantile`` (a callable eta -> gamma_0) takes precedence; otherwise
    gamma_0 is the empirical quantile of |G| over the ensemble.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    if gain_quantile is not None:
        gamma0 = float(gain_quantile(eta))
    else:
        if ensemble is None:
            raise ValueError("need an ensemble or an analytic gain quantile")
        if (ensemble.n_rx, ensemble.n_tx) != (1, 1):
            raise ValueError("SISO closed form needs a 1x1 ensemble")
        if rng is None and not isinstance(ensemble, (PointMass, FiniteSupport, Empirical)):
            raise ValueError("sampling a continuous ensemble needs a generator")
        pool = draw_pool(ensemble, n_samples, rng)
        mags = np.abs(pool.states[:, 0, 0])
        gamma0 = upper_quantile(mags, eta, pool.weights if pool.exact else None)
    return float(np.log2(1.0 + power * gamma0**2 / sigma_sq))
