"""Compound Gaussian MIMO codes with information-density threshold decoding.

Covers the random Gaussian codebook construction for a finite family of
states, the decoder that accepts the unique codeword whose information
density exceeds a threshold for some family member, the closed-form error
bounds that govern that construction, and Monte Carlo harnesses that check
each bound against simulation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channel import as_state, check_covariance, complex_normal, log_det_mi, operator_norm
from .outage import wilson_half_width
from .rng import parallel_map, split

LN2 = math.log(2.0)


@dataclass(frozen=True)
class CompoundFamily:
    states: tuple
    norm_bound_a: float
    sigma_sq: float

    def __post_init__(self):
        states = tuple(as_state(s) for s in self.states)
        if self.norm_bound_a <= 0 or self.sigma_sq <= 0:
            raise ValueError("norm bound and noise variance must be positive")
        if len({s.shape for s in states}) > 1:
            raise ValueError("family members must share dimensions")
        for s in states:
            if operator_norm(s) > self.norm_bound_a + 1e-12:
                raise ValueError(f"state with norm {operator_norm(s):.4g} exceeds a={self.norm_bound_a}")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return len(self.states)

    def min_rate(self, q) -> float:
        return min(log_det_mi(g, q, self.sigma_sq) for g in self.states)


@dataclass(frozen=True)
class GaussianCodebook:
    codewords: np.ndarray  # (tau, n_tx, n)
    generator_covariance: np.ndarray
    power_cap: float
    resampled: int = 0

    @property
    def tau(self) -> int:
        return self.codewords.shape[0]

    @property
    def block_length(self) -> int:
        return self.codewords.shape[2]


@dataclass(frozen=True)
class ThresholdDecoderSpec:
    alpha: float
    delta: float
    generator_covariance: np.ndarray
    sigma_sq: float

    def __post_init__(self):
        if self.alpha <= 0 or self.delta <= 0:
            raise ValueError("alpha and delta must be positive")

    @property
    def threshold(self) -> float:
        return self.alpha + self.delta


def generate_codebook(tau: int, n: int, q1, power: float, rng: np.random.Generator,
                      max_rounds: int = 10_000) -> GaussianCodebook:
    """Draw ``tau`` i.i.d. CN(0, q1) blocks, redrawing any block outside E_n."""
    q1 = check_covariance(q1, power)
    if np.linalg.eigvalsh(q1).min() <= 0:
        raise ValueError("generator covariance must be non-singular")
    n_tx = q1.shape[0]
    root = np.linalg.cholesky(q1)
    words = np.empty((tau, n_tx, n), dtype=complex)
    todo = np.arange(tau)
    resampled = 0
    for _ in range(max_rounds):
        draw = root @ complex_normal(rng, (todo.size, n_tx, n))
        words[todo] = draw
        bad = np.sum(np.abs(draw) ** 2, axis=(1, 2)) / n > power
        if not bad.any():
            break
        resampled += int(bad.sum())
        todo = todo[bad]
    else:
        raise RuntimeError("could not draw codewords inside the power constraint")
    words.setflags(write=False)
    return GaussianCodebook(words, q1, power, resampled)


# ---------------------------------------------------------------------------
# information density


def _output_cov(g: np.ndarray, q: np.ndarray, sigma_sq: float) -> np.ndarray:
    return g @ q @ g.conj().T + sigma_sq * np.eye(g.shape[0])


def info_density(g, q, t_block, z_block, sigma_sq: float) -> float:
    """log2 W_g(z^n | t^n) / q(z^n) with q the product CN(0, g q g^H + s I) density."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    q = check_covariance(q)
    t = np.asarray(t_block, dtype=complex).reshape(g.shape[1], -1)
    z = np.asarray(z_block, dtype=complex).reshape(g.shape[0], -1)
    if t.shape[1] != z.shape[1]:
        raise ValueError("input and output blocks differ in length")
    theta = _output_cov(g, q, sigma_sq)
    try:
        chol = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular output covariance") from exc
    n = t.shape[1]
    logdet = 2 * np.sum(np.log(np.diag(chol).real)) - g.shape[0] * math.log(sigma_sq)
    w = np.linalg.solve(chol, z)
    quad = np.sum(np.abs(w) ** 2)
    resid = np.sum(np.abs(z - g @ t) ** 2) / sigma_sq
    return float((n * logdet + quad - resid) / LN2)


def _density_parts(g: np.ndarray, q: np.ndarray, sigma_sq: float, z: np.ndarray):
    """Per-state constant and z-only term for a batch of outputs (trials, n_rx, n)."""
    theta = _output_cov(g, q, sigma_sq)
    chol = np.linalg.cholesky(theta)
    logdet = 2 * np.sum(np.log(np.diag(chol).real)) - g.shape[0] * math.log(sigma_sq)
    theta_inv = np.linalg.inv(theta)
    quad = np.einsum("trn,rs,tsn->t", z.conj(), theta_inv, z).real
    return logdet, quad


def info_density_matrix(g, q, codewords: np.ndarray, z: np.ndarray, sigma_sq: float) -> np.ndarray:
    """i_g(t_l, z_k) in bits for every output ``z_k`` and codeword ``t_l``.

    ``codewords`` is (tau, n_tx, n), ``z`` is (trials, n_rx, n); the result is
    (trials, tau).
    """
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    n = codewords.shape[2]
    logdet, quad = _density_parts(g, q, sigma_sq, z)
    gt = np.einsum("rs,lsn->lrn", g, codewords)
    cross = np.einsum("lrn,trn->tl", gt.conj(), z).real
    gt_sq = np.sum(np.abs(gt) ** 2, axis=(1, 2))
    z_sq = np.sum(np.abs(z) ** 2, axis=(1, 2))
    resid = (z_sq[:, None] - 2 * cross + gt_sq[None, :]) / sigma_sq
    return (n * logdet + quad[:, None] - resid) / LN2


# ---------------------------------------------------------------------------
# closed-form bounds


def chernoff_info_density_bound(n: int, n_rx: int, delta: float) -> float:
    """Bound on P[i_g(T^n, Z^n) <= E i_g - n delta] for Gaussian inputs."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    exponent = n * n_rx / (2 * LN2) * (math.sqrt(1 + (LN2 * delta) ** 2 / n_rx**2) - 1)
    return 2.0 ** (-exponent)


def power_overflow_bound(n: int, trace_cap_m: float, delta: float) -> float:
    """Bound on P[sum ||X_i||^2 >= n (M + delta)] for X_i ~ CN(0, O), tr O <= M."""
    if trace_cap_m <= 0 or delta < 0:
        raise ValueError("M must be positive and delta nonnegative")
    r = delta / trace_cap_m
    return ((1 + r) * 2.0 ** (-r / LN2)) ** n


def beta_hat(beta: float, power: float) -> float:
    """Per-symbol exponent of the codeword power-overflow probability."""
    p_hat = power - beta
    if not 0 < beta < power:
        raise ValueError("back-off must satisfy 0 < beta < P")
    return beta / (LN2 * p_hat) - math.log2(1 + beta / p_hat)


def feinstein_compound_bound(family_size: int, tau: int, alpha: float, delta: float, n: int,
                             beta_hat_value: float, theta_terms, n_rx: int = 1) -> float:
    """Four-term error bound for a threshold-decoded Gaussian code on a finite family.

    |G'| tau 2^-alpha + |G'|^2 2^-delta + |G'| P[T not in E_n] + sum_g P[i_g <= alpha + delta].
    The overflow probability is 2^(-n beta_hat) and each tail is the Chernoff
    bound at the per-state deviation in ``theta_terms`` (one value per family
    member, or a single value shared by all).
    """
    if family_size == 0:
        return 0.0
    tails = np.atleast_1d(np.asarray(theta_terms, dtype=float))
    if tails.size not in (1, family_size):
        raise ValueError("need one deviation per family member (or one shared value)")
    if tails.size == 1:
        tails = np.repeat(tails, family_size)
    k = family_size
    tail_sum = sum(chernoff_info_density_bound(n, n_rx, float(d)) for d in tails)
    return (k * tau * 2.0 ** (-alpha) + k * k * 2.0 ** (-delta) + k * 2.0 ** (-n * beta_hat_value)
            + tail_sum)


def compound_code_parameters(n: int, rate: float, theta: float) -> dict:
    """tau, alpha and delta for a length-n code of rate ``rate`` with gap parameter ``theta``."""
    return {"tau": int(math.floor(2.0 ** (n * rate))), "alpha": n * (rate + theta / 8),
            "delta": n * theta / 8}


def compound_code_bound(family_size: int, n: int, rate: float, theta: float, power: float,
                        n_rx: int, beta: float | None = None) -> float:
    """Feinstein bound at the standard code parameters, back-off ``beta`` (default P/10).

    Each information-density tail is taken at deviation theta/4 below the mean.
    """
    beta = power / 10 if beta is None else beta
    prm = compound_code_parameters(n, rate, theta)
    return feinstein_compound_bound(family_size, prm["tau"], prm["alpha"], prm["delta"], n,
                                    beta_hat(beta, power), theta / 4, n_rx)


def compound_code_bound_closed(family_size: int, n: int, theta: float, power: float, n_rx: int,
                               beta: float | None = None) -> float:
    """(|G'| + |G'|^2) 2^(-n theta/8) + |G'| 2^(-n beta_hat) + |G'| 2^(-n c1)."""
    beta = power / 10 if beta is None else beta
    k = family_size
    c1 = n_rx / (2 * LN2) * (math.sqrt(1 + (LN2 * theta) ** 2 / (4 * n_rx) ** 2) - 1)
    return ((k + k * k) * 2.0 ** (-n * theta / 8) + k * 2.0 ** (-n * beta_hat(beta, power))
            + k * 2.0 ** (-n * c1))


def likelihood_ratio_bound(g, g_hat, n: int, power: float, rho: float, a: float,
                           sigma_sq: float) -> float:
    """Upper bound on W_g(z^n|t^n) / W_g_hat(z^n|t^n) for block powers <= P and <= rho."""
    dist = operator_norm(np.asarray(g, dtype=complex) - np.asarray(g_hat, dtype=complex))
    return 2.0 ** (likelihood_ratio_exponent(dist, n, power, rho, a, sigma_sq))


def likelihood_ratio_exponent(dist: float, n: int, power: float, rho: float, a: float,
                              sigma_sq: float) -> float:
    return 2 * n / (LN2 * sigma_sq) * (math.sqrt(power * rho) + a * power) * dist


def output_power_threshold(a: float, power: float, n_rx: int, sigma_sq: float) -> tuple[float, float]:
    """(rho, per-symbol factor) such that P[(1/n) sum ||z_i||^2 >= rho] <= factor^n."""
    if min(a, power, sigma_sq) <= 0 or n_rx < 1:
        raise ValueError("arguments must be positive")
    rho = 2 * a * a * power + 2 * n_rx * sigma_sq + 2
    s = sigma_sq * n_rx
    return rho, (1 + 1 / s) * 2.0 ** (-1 / (LN2 * s))


# ---------------------------------------------------------------------------
# covariance and net constructions


def perturb_to_nonsingular(q, epsilon: float, family: CompoundFamily, power: float) -> np.ndarray:
    """Non-singular Q' with tr Q' < P losing at most ``epsilon`` bits on the family minimum.

    Q' = (1 - s) q + s (P/2 / n_tx) I with s halved from 1/2 until the
    deficit condition holds.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    q = check_covariance(q, power)
    n_tx = q.shape[0]
    if np.linalg.eigvalsh(q).min() > 1e-12 and np.trace(q).real < power - 1e-12:
        return q
    target = family.min_rate(q) - epsilon
    iso = np.eye(n_tx) * (power / 2 / n_tx)
    for k in range(1, 31):
        s = 2.0**-k
        cand = (1 - s) * q + s * iso
        if family.min_rate(cand) >= target:
            assert np.linalg.eigvalsh(cand).min() > 0
            return cand
    raise ValueError(f"no perturbation within 2^-30 meets deficit {epsilon}; epsilon too small")


def backoff_covariance(q, beta: float, power: float) -> np.ndarray:
    """Scale a non-singular covariance to trace P - beta."""
    q = check_covariance(q, power)
    if not 0 < beta < power:
        raise ValueError("back-off must satisfy 0 < beta < P")
    if np.linalg.eigvalsh(q).min() <= 0:
        raise ValueError("covariance must be non-singular")
    return q * ((power - beta) / np.trace(q).real)


def epsilon_net(norm_bound_a: float, n_tx: int, n_rx: int, mu: float,
                cap: int = 10**6) -> list[np.ndarray]:
    """Finite set inside the a-ball covering it to within ``mu`` in operator norm.

    Grid points of pitch mu / sqrt(2 n_tx n_rx) within a + mu/2 of the origin
    are kept, and those outside the ball are pulled radially onto it.
    """
    if mu <= 0 or norm_bound_a <= 0:
        raise ValueError("mu and a must be positive")
    if mu >= norm_bound_a:
        return [np.zeros((n_rx, n_tx), dtype=complex)]
    dims = 2 * n_tx * n_rx
    pitch = mu / math.sqrt(dims)
    reach = norm_bound_a + mu / 2
    k = int(math.floor(reach / pitch))
    axis = pitch * np.arange(-k, k + 1)
    raw = axis.size**dims
    if raw > cap:
        raise ValueError(f"net grid has {raw} points (cap {cap}); mu too small")
    pts = np.array(list(itertools.product(axis, repeat=dims)))
    # Frobenius filter first, it upper-bounds the operator norm
    pts = pts[np.sum(pts**2, axis=1) <= (reach + 1e-12) ** 2 * min(n_tx, n_rx)]
    mats = (pts[:, : dims // 2] + 1j * pts[:, dims // 2:]).reshape(-1, n_rx, n_tx)
    norms = np.linalg.norm(mats, ord=2, axis=(1, 2))
    mats = mats[norms <= reach + 1e-12]
    norms = norms[norms <= reach + 1e-12]
    scale = np.where(norms > norm_bound_a, norm_bound_a / np.maximum(norms, 1e-300), 1.0)
    mats = mats * scale[:, None, None]
    if len(mats) > cap:
        raise ValueError(f"net has {len(mats)} points (cap {cap}); mu too small")
    return [m for m in mats]


def degrade_to_ball(z: np.ndarray, g, a: float, sigma_sq: float, rng: np.random.Generator):
    """Map outputs of W_g with ||g|| > a onto outputs of W_g' with g' = a g / ||g||.

    Scaling by a/||g|| and adding independent noise restores the noise level
    sigma^2, so decoders built for the a-ball apply unchanged.
    """
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    norm = operator_norm(g)
    if norm <= a:
        return z, g
    c = a / norm
    extra = complex_normal(rng, np.shape(z), sigma_sq * (1 - c * c))
    return c * z + extra, c * g


# ---------------------------------------------------------------------------
# decoding and simulation


def threshold_decode(z: np.ndarray, codebook: GaussianCodebook, decoder: ThresholdDecoderSpec,
                     family: CompoundFamily) -> np.ndarray:
    """Unique codeword whose max-over-family information density exceeds the threshold.

    ``z`` is (trials, n_rx, n). Returns decoded indices, -1 for none or ties.
    """
    z = np.asarray(z, dtype=complex)
    if z.ndim == 2:
        z = z[None]
    best = None
    for g in family.states:
        dens = info_density_matrix(g, decoder.generator_covariance, codebook.codewords, z,
                                   decoder.sigma_sq)
        best = dens if best is None else np.maximum(best, dens)
    above = best > decoder.threshold
    count = above.sum(axis=1)
    return np.where(count == 1, np.argmax(above, axis=1), -1)


def simulate_compound_error(codebook: GaussianCodebook, decoder: ThresholdDecoderSpec,
                            family: CompoundFamily, trials: int, rng: np.random.Generator,
                            states=None, noiseless: bool = False, confidence: float = 0.95,
                            batch: int = 256, threads: int = 1) -> list[dict]:
    """Monte Carlo maximum-over-messages error for each channel state.

    ``trials`` transmissions per state are assigned to messages round robin.
    States outside the family's norm ball are handled by degrading the output
    onto the ball (the receiver knows the state).
    """
    states = family.states if states is None else [as_state(s) for s in states]
    tau = codebook.tau

    def one_state(item):
        g, r = item
        errors = np.zeros(tau, dtype=int)
        counts = np.zeros(tau, dtype=int)
        for start in range(0, trials, batch):
            msgs = np.arange(start, min(start + batch, trials)) % tau
            clean = np.einsum("rs,tsn->trn", g, codebook.codewords[msgs])
            if noiseless:
                z = clean
            else:
                z = clean + complex_normal(r, clean.shape, decoder.sigma_sq)
                z, _ = degrade_to_ball(z, g, family.norm_bound_a, decoder.sigma_sq, r)
            decoded = threshold_decode(z, codebook, decoder, family)
            np.add.at(errors, msgs, decoded != msgs)
            np.add.at(counts, msgs, 1)
        rates = np.where(counts > 0, errors / np.maximum(counts, 1), 0.0)
        worst = int(np.argmax(rates))
        return {
            "max_error": float(rates[worst]),
            "mean_error": float(errors.sum() / max(counts.sum(), 1)),
            "ci_half_width": wilson_half_width(float(rates[worst]), int(counts[worst]), confidence),
            "trials": int(counts.sum()),
        }

    return parallel_map(one_state, list(zip(states, split(rng, len(states)))), threads)


def gain_for_rate(rate: float, q1_scalar: float, sigma_sq: float = 1.0) -> float:
    """Scalar gain g with log2(1 + g^2 q / sigma^2) = rate."""
    return math.sqrt((2.0**rate - 1) * sigma_sq / q1_scalar)


# ---------------------------------------------------------------------------
# Monte Carlo checks of the closed-form bounds


def empirical_info_density_tail(g, q, n: int, delta: float, sigma_sq: float, trials: int,
                                rng: np.random.Generator, batch: int = 20_000) -> float:
    """Frequency of i_g(T^n, Z^n) <= n f(g, q) - n delta with T_i ~ CN(0, q)."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    q = check_covariance(q)
    root = np.linalg.cholesky(q)
    mean = n * log_det_mi(g, q, sigma_sq)
    hits = 0
    for start in range(0, trials, batch):
        m = min(batch, trials - start)
        t = root @ complex_normal(rng, (m, q.shape[0], n))
        z = g @ t + complex_normal(rng, (m, g.shape[0], n), sigma_sq)
        logdet, quad = _density_parts(g, q, sigma_sq, z)
        resid = np.sum(np.abs(z - g @ t) ** 2, axis=(1, 2)) / sigma_sq
        dens = (n * logdet + quad - resid) / LN2
        hits += int(np.sum(dens <= mean - n * delta))
    return hits / trials


def empirical_power_overflow(cov, n: int, delta: float, trials: int, rng: np.random.Generator,
                             batch: int = 50_000) -> float:
    """Frequency of sum ||X_i||^2 >= n (tr cov + delta) for X_i ~ CN(0, cov)."""
    cov = check_covariance(cov)
    lam = np.clip(np.linalg.eigvalsh(cov), 0, None)
    m_cap = float(np.trace(cov).real)
    hits = 0
    for start in range(0, trials, batch):
        m = min(batch, trials - start)
        # ||X||^2 = sum_j lam_j |U_j|^2 with U ~ CN(0, I)
        energy = np.sum(lam[None, None, :] * rng.exponential(1.0, (m, n, lam.size)), axis=(1, 2))
        hits += int(np.sum(energy >= n * (m_cap + delta)))
    return hits / trials


def empirical_output_power(g, t_block, sigma_sq: float, rho: float, trials: int,
                           rng: np.random.Generator, batch: int = 50_000) -> float:
    """Frequency of (1/n) sum ||z_i||^2 >= rho for a fixed input block."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    t = np.asarray(t_block, dtype=complex)
    n = t.shape[1]
    clean = g @ t
    hits = 0
    for start in range(0, trials, batch):
        m = min(batch, trials - start)
        z = clean[None] + complex_normal(rng, (m,) + clean.shape, sigma_sq)
        hits += int(np.sum(np.sum(np.abs(z) ** 2, axis=(1, 2)) / n >= rho))
    return hits / trials


def empirical_max_log_ratio(g, g_hat, n: int, power: float, rho: float, sigma_sq: float,
                            trials: int, rng: np.random.Generator) -> float:
    """Largest observed log2 W_g/W_g_hat over random and aligned blocks at full power."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    g_hat = np.atleast_2d(np.asarray(g_hat, dtype=complex))
    n_rx, n_tx = g.shape
    t = complex_normal(rng, (trials, n_tx, n))
    t *= np.sqrt(n * power / np.sum(np.abs(t) ** 2, axis=(1, 2)))[:, None, None]
    z = complex_normal(rng, (trials, n_rx, n))
    # half the outputs point along (g_hat - g) t, which pushes the ratio up
    half = trials // 2
    z[:half] = np.einsum("rs,tsn->trn", g_hat - g, t[:half]) + 0.1 * z[:half]
    z *= np.sqrt(n * rho / np.maximum(np.sum(np.abs(z) ** 2, axis=(1, 2)), 1e-300))[:, None, None]
    r_g = np.sum(np.abs(z - np.einsum("rs,tsn->trn", g, t)) ** 2, axis=(1, 2))
    r_h = np.sum(np.abs(z - np.einsum("rs,tsn->trn", g_hat, t)) ** 2, axis=(1, 2))
    return float(np.max((r_h - r_g) / sigma_sq) / LN2)


def _random_state(rng, n_rx, n_tx, norm):
    g = complex_normal(rng, (n_rx, n_tx))
    return g * (norm / operator_norm(g))


def _random_cov(rng, dim, trace):
    a = complex_normal(rng, (dim, dim))
    c = a @ a.conj().T
    return c * (trace / np.trace(c).real)


DEFAULT_GRIDS = {
    "info-density-chernoff": [
        {"n": 10, "n_rx": 1, "delta": 1.0},
        {"n": 8, "n_rx": 2, "delta": 1.5},
        {"n": 20, "n_rx": 1, "delta": 0.5},
    ],
    "power-overflow": [
        {"n": 10, "m": 1.0, "delta": 1.0},
        {"n": 5, "m": 2.0, "delta": 1.0},
        {"n": 20, "m": 1.0, "delta": 0.5},
    ],
    "likelihood-ratio": [
        {"n": 10, "dist": 0.05, "a": 1.0, "power": 1.0, "n_rx": 1, "n_tx": 1},
        {"n": 20, "dist": 0.1, "a": 2.0, "power": 1.0, "n_rx": 2, "n_tx": 2},
        {"n": 5, "dist": 0.2, "a": 1.0, "power": 2.0, "n_rx": 2, "n_tx": 1},
    ],
    "output-power": [
        {"n": 1, "a": 1.0, "power": 1.0, "n_rx": 1, "sigma_sq": 1.0},
        {"n": 2, "a": 1.0, "power": 1.0, "n_rx": 2, "sigma_sq": 0.5},
        {"n": 3, "a": 2.0, "power": 1.0, "n_rx": 1, "sigma_sq": 0.25},
    ],
}


def verify_bounds(rng: np.random.Generator, trials: int = 100_000, ratio_trials: int = 1000,
                  confidence: float = 0.95, grids: dict | None = None) -> list[dict]:
    """Empirical vs analytic value for each bound over its parameter grid.

    A row passes when empirical <= analytic + Wilson half-width (probability
    bounds) or empirical <= analytic (likelihood ratio, compared in log2).
    """
    grids = grids or DEFAULT_GRIDS
    rows = []
    for prm in grids.get("info-density-chernoff", []):
        n_rx = prm["n_rx"]
        n_tx = prm.get("n_tx", n_rx)
        g = _random_state(rng, n_rx, n_tx, prm.get("norm", 1.0))
        q = _random_cov(rng, n_tx, prm.get("power", 1.0))
        sigma_sq = prm.get("sigma_sq", 1.0)
        emp = empirical_info_density_tail(g, q, prm["n"], prm["delta"], sigma_sq, trials, rng)
        bound = chernoff_info_density_bound(prm["n"], n_rx, prm["delta"])
        rows.append(_row("info-density-chernoff", prm, bound, emp, trials, confidence))
    for prm in grids.get("power-overflow", []):
        cov = _random_cov(rng, prm.get("dim", 2), prm["m"])
        emp = empirical_power_overflow(cov, prm["n"], prm["delta"], trials, rng)
        bound = power_overflow_bound(prm["n"], prm["m"], prm["delta"])
        rows.append(_row("power-overflow", prm, bound, emp, trials, confidence))
    for prm in grids.get("likelihood-ratio", []):
        sigma_sq = prm.get("sigma_sq", 1.0)
        a, power, n = prm["a"], prm["power"], prm["n"]
        g = _random_state(rng, prm["n_rx"], prm["n_tx"], a * 0.9)
        d = _random_state(rng, prm["n_rx"], prm["n_tx"], prm["dist"])
        g_hat = g + d
        if operator_norm(g_hat) > a:
            g_hat *= a / operator_norm(g_hat)
        rho = output_power_threshold(a, power, prm["n_rx"], sigma_sq)[0]
        emp = empirical_max_log_ratio(g, g_hat, n, power, rho, sigma_sq, ratio_trials, rng)
        bound = likelihood_ratio_exponent(operator_norm(g - g_hat), n, power, rho, a, sigma_sq)
        rows.append({"bound_name": "likelihood-ratio", "parameters": prm, "analytic_value": bound,
                     "empirical_value": emp, "trials": ratio_trials, "ci_half_width": 0.0,
                     "units": "log2", "passed": bool(emp <= bound)})
    for prm in grids.get("output-power", []):
        a, power, sigma_sq, n = prm["a"], prm["power"], prm["sigma_sq"], prm["n"]
        g = _random_state(rng, prm["n_rx"], prm.get("n_tx", 1), a)
        t = complex_normal(rng, (g.shape[1], n))
        t *= math.sqrt(n * power / np.sum(np.abs(t) ** 2))
        rho, factor = output_power_threshold(a, power, prm["n_rx"], sigma_sq)
        emp = empirical_output_power(g, t, sigma_sq, rho, trials, rng)
        rows.append(_row("output-power", prm, factor**n, emp, trials, confidence))
    return rows


def _row(name, prm, bound, emp, trials, confidence):
    half = wilson_half_width(emp, trials, confidence)
    return {"bound_name": name, "parameters": prm, "analytic_value": float(bound),
            "empirical_value": float(emp), "trials": trials, "ci_half_width": half,
            "units": "probability", "passed": bool(emp <= bound + half)}


@dataclass(frozen=True)
class CompoundCode:
    codebook: GaussianCodebook
    decoder: ThresholdDecoderSpec
    family: CompoundFamily


def build_code(transport, tau: int, rng: np.random.Generator) -> CompoundCode:
    """Codebook and decoder carrying ``tau`` messages for a PhysicalCompound transport."""
    q = check_covariance(transport.q)
    power = float(np.trace(q).real)
    beta = power / 10 if transport.beta is None else transport.beta
    q1 = backoff_covariance(q, beta, power)
    n = transport.block_length
    rate = math.log2(tau) / n
    prm = compound_code_parameters(n, rate, transport.theta)
    book = generate_codebook(tau, n, q1, power, rng)
    fam = transport.family
    dec = ThresholdDecoderSpec(prm["alpha"], prm["delta"], q1, fam.sigma_sq)
    return CompoundCode(book, dec, fam)


def apply_code(code: CompoundCode, message: int, g, transport, rng: np.random.Generator) -> int:
    """Send one message over state ``g`` and threshold-decode it (-1 on failure)."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    clean = g @ code.codebook.codewords[message]
    if getattr(transport, "noiseless", False):
        z = clean
    else:
        z = clean + complex_normal(rng, clean.shape, code.decoder.sigma_sq)
        z, _ = degrade_to_ball(z, g, code.family.norm_bound_a, code.decoder.sigma_sq, rng)
    return int(threshold_decode(z[None], code.codebook, code.decoder, code.family)[0])
