"""Block-level simulation of the binning protocol that generates common randomness.

Terminal A sees x^n, picks the first codeword jointly typical with it, and
sends that codeword's bin index over the fading link. Terminal B looks in the
received bin for the unique codeword jointly typical with y^n. Both sides fall
back to a reserved constant word u0 when no (or no unique) codeword fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .channel import FadingEnsemble, check_covariance, log_det_mi, sample_states
from .cr import JointSource, TestChannel, entropy, induced_quantities
from .rng import as_generator, parallel_map, split

RESERVE = -1  # label of u0


@dataclass(frozen=True)
class GenieBitPipe:
    """Delivers the index iff the instantaneous log-det rate supports it.

    ``q`` is the transmit covariance (defaults to isotropic at the
    OutageSpec power). ``force_failure`` always delivers a wrong index.
    """

    q: np.ndarray | None = None
    force_failure: bool = False


@dataclass(frozen=True)
class PhysicalCompound:
    """Sends the index with a Gaussian threshold-decoded code over the sampled state."""

    block_length: int
    family: object  # CompoundFamily
    q: np.ndarray
    theta: float = 0.5
    beta: float | None = None
    noiseless: bool = False


@dataclass(frozen=True)
class ProtocolConfig:
    block_length_n: int
    mu: float
    typ_delta: float = 0.05
    alpha_target: float = 0.1
    u_type: tuple | None = None
    transport: object = field(default_factory=GenieBitPipe)
    trials: int = 200
    n_states: int = 20
    decoder_typicality: bool = True
    max_codewords: int = 2**20

    def __post_init__(self):
        if self.block_length_n < 1 or self.mu <= 0 or self.typ_delta <= 0 or self.trials < 1:
            raise ValueError("n, mu, typ_delta and trials must be positive")
        if not 0 < self.alpha_target < 1:
            raise ValueError("alpha_target must lie in (0, 1)")
        if self.u_type is not None:
            counts = np.asarray(self.u_type, dtype=float) * self.block_length_n
            if np.any(np.abs(counts - np.round(counts)) > 1e-9) or abs(sum(self.u_type) - 1) > 1e-9:
                raise ValueError("u_type is not a type for block length n")


@dataclass(frozen=True)
class BinCodebook:
    words: np.ndarray  # (n1 * n2, n) int, bin i occupies rows i*n2 .. (i+1)*n2 - 1
    reserve_word: np.ndarray
    n1: int
    n2: int
    u_type: tuple

    def bin(self, i: int) -> np.ndarray:
        """Members of bin i (1-based)."""
        return self.words[(i - 1) * self.n2: i * self.n2]

    def sequence(self, label: int) -> np.ndarray:
        return self.reserve_word if label == RESERVE else self.words[label]

    @cached_property
    def indicators(self) -> np.ndarray:
        """(u_card, N1*N2, n) float32 one-hot planes of the codewords."""
        return np.stack([(self.words == u).astype(np.float32) for u in range(len(self.u_type))])


@dataclass
class ProtocolOutcome:
    per_state_disagreement: np.ndarray
    outage_fraction: float
    entropy_rate_estimate: float
    k_alphabet_size: int
    n1: int
    n2: int
    cardinality_exponent: float
    cardinality_ok: bool
    encoder_hit_rate: float
    states: np.ndarray
    state_rates: np.ndarray


def nearest_type(pmf, n: int) -> tuple:
    """Round a pmf to an n-type by largest remainder."""
    pmf = np.asarray(pmf, dtype=float)
    raw = pmf * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return tuple(float(c) / n for c in counts)


def bin_sizes(iux: float, iuy: float, n: int, mu: float) -> tuple[int, int]:
    """(N1, N2), each clamped to at least 1."""
    n1 = int(math.floor(2.0 ** (n * (iux - iuy + 3 * mu))))
    n2 = int(math.floor(2.0 ** (n * (iuy - 2 * mu))))
    return max(n1, 1), max(n2, 1)


def aux_joint(source: JointSource, aux: TestChannel) -> tuple[np.ndarray, np.ndarray]:
    """P_UX (u, x) and P_UY (u, y) for U drawn from X through ``aux``."""
    p_ux = (source.px[:, None] * aux.rows).T
    p_uy = aux.rows.T @ source.pmf
    return p_ux, p_uy


def generate_codebook(config: ProtocolConfig, aux_channel: TestChannel, source: JointSource,
                      rng: np.random.Generator) -> BinCodebook:
    """N1 bins of N2 words, each uniform on the type class of the U type."""
    n = config.block_length_n
    iux, iuy = induced_quantities(source, aux_channel)
    n1, n2 = bin_sizes(iux, iuy, n, config.mu)
    if n1 * n2 > config.max_codewords:
        raise ValueError(f"N1*N2 = {n1 * n2} exceeds the cap {config.max_codewords}")
    p_u = source.px @ aux_channel.rows
    u_type = config.u_type if config.u_type is not None else nearest_type(p_u, n)
    if len(u_type) != aux_channel.u_card:
        raise ValueError("u_type length must match the U alphabet")
    counts = np.round(np.asarray(u_type) * n).astype(int)
    base = np.repeat(np.arange(len(counts)), counts)
    words = rng.permuted(np.tile(base, (n1 * n2, 1)), axis=1)
    words.setflags(write=False)
    reserve = np.full(n, int(np.argmax(p_u)))
    return BinCodebook(words, reserve, n1, n2, tuple(u_type))


def joint_type(a_seq, b_seq, a_card: int, b_card: int) -> np.ndarray:
    a_seq = np.asarray(a_seq)
    b_seq = np.asarray(b_seq)
    if a_seq.shape != b_seq.shape:
        raise ValueError("sequences differ in length")
    counts = np.zeros((a_card, b_card))
    np.add.at(counts, (a_seq, b_seq), 1)
    return counts / a_seq.size


def joint_typicality(x_seq, u_seq, joint_pmf, typ_delta: float) -> bool:
    """L-infinity closeness of the joint type of (u, x) to ``joint_pmf`` (rows u, cols x)."""
    joint_pmf = np.asarray(joint_pmf, dtype=float)
    t = joint_type(u_seq, x_seq, *joint_pmf.shape)
    return bool(np.max(np.abs(t - joint_pmf)) <= typ_delta + 1e-12)


def _typical_mask(planes: np.ndarray, seq: np.ndarray, joint_pmf: np.ndarray, delta: float) -> np.ndarray:
    """Typicality of every word (given as one-hot planes (u, m, n)) against one side sequence."""
    n = planes.shape[2]
    side = (seq[:, None] == np.arange(joint_pmf.shape[1])[None, :]).astype(np.float32)
    freq = (planes @ side).astype(float) / n  # (u, m, s), counts are exact in float32
    worst = np.max(np.abs(freq - joint_pmf[:, None, :]), axis=(0, 2))
    return worst <= delta + 1e-12


def encoder_phi(x_seq, codebook: BinCodebook, joint_pmf, typ_delta: float,
                chunk: int = 4096) -> tuple[int, int]:
    """(K label, bin index): the first jointly typical word in scan order, else (u0, N1 + 1)."""
    x_seq = np.asarray(x_seq)
    joint_pmf = np.asarray(joint_pmf, dtype=float)
    planes = codebook.indicators
    for start in range(0, planes.shape[1], chunk):
        mask = _typical_mask(planes[:, start:start + chunk], x_seq, joint_pmf, typ_delta)
        hits = np.flatnonzero(mask)
        if hits.size:
            k = start + int(hits[0])
            return k, k // codebook.n2 + 1
    return RESERVE, codebook.n1 + 1


def decoder_psi(y_seq, received_index: int, codebook: BinCodebook, joint_pmf_uy, typ_delta: float,
                typicality: bool = True) -> int:
    """L label: the unique typical member of the received bin, otherwise u0."""
    if not 1 <= received_index <= codebook.n1 + 1:
        raise ValueError("received index out of range")
    if received_index == codebook.n1 + 1:
        return RESERVE
    members = codebook.bin(received_index)
    if typicality:
        lo = (received_index - 1) * codebook.n2
        planes = codebook.indicators[:, lo:lo + codebook.n2]
        mask = _typical_mask(planes, np.asarray(y_seq), np.asarray(joint_pmf_uy, dtype=float), typ_delta)
    else:
        mask = np.ones(len(members), dtype=bool)
    hits = np.flatnonzero(mask)
    # several hits count as ambiguous even if two bin members happen to coincide
    if hits.size != 1:
        return RESERVE
    return (received_index - 1) * codebook.n2 + int(hits[0])


def _wrong_index(sent: int, size: int, rng: np.random.Generator) -> int:
    if size == 1:
        return sent
    k = int(rng.integers(1, size))
    return k if k < sent else k + 1


def transmit_bin(bin_index: int, transport, g, rng: np.random.Generator, n: int, n1: int,
                 power: float = 1.0, sigma_sq: float = 1.0, physical_code=None) -> int:
    """Index received by terminal B over state ``g``."""
    size = n1 + 1
    if not 1 <= bin_index <= size:
        raise ValueError("bin index out of range")
    if isinstance(transport, GenieBitPipe):
        if transport.force_failure:
            return _wrong_index(bin_index, size, rng)
        q = transport.q
        g = np.atleast_2d(g)
        q = np.eye(g.shape[1]) * (power / g.shape[1]) if q is None else check_covariance(q)
        if math.log2(size) / n <= log_det_mi(g, q, sigma_sq):
            return bin_index
        return _wrong_index(bin_index, size, rng)
    if isinstance(transport, PhysicalCompound):
        from .compound import apply_code

        decoded = apply_code(physical_code, bin_index - 1, g, transport, rng)
        return size if decoded < 0 else decoded + 1
    raise TypeError(f"unknown transport {transport!r}")


def _physical_code(transport: PhysicalCompound, size: int, rng):
    from .compound import build_code

    return build_code(transport, size, rng)


def _draw_source(source: JointSource, n: int, trials: int, rng) -> tuple[np.ndarray, np.ndarray]:
    flat = rng.choice(source.pmf.size, size=(trials, n), p=source.pmf.ravel())
    return np.divmod(flat, source.pmf.shape[1])


def run_protocol(source: JointSource, aux_channel: TestChannel, config: ProtocolConfig,
                 ensemble: FadingEnsemble, spec, rng, threads: int = 1) -> ProtocolOutcome:
    """Per-state disagreement statistics of the protocol over sampled fading states."""
    rng = as_generator(rng)
    r_book, r_states, r_code, r_run = split(rng, 4)
    n = config.block_length_n
    book = generate_codebook(config, aux_channel, source, r_book)
    p_ux, p_uy = aux_joint(source, aux_channel)
    states = sample_states(ensemble, r_states, config.n_states)
    code = None
    if isinstance(config.transport, PhysicalCompound):
        code = _physical_code(config.transport, book.n1 + 1, r_code)
    if isinstance(config.transport, GenieBitPipe) and not config.transport.force_failure:
        q = config.transport.q
        nt = states.shape[2]
        q = np.eye(nt) * (spec.power / nt) if q is None else check_covariance(q)
        rates = np.array([log_det_mi(g, q, spec.sigma_sq) for g in states])
    else:
        rates = np.full(len(states), np.nan)

    def one_state(item):
        g, r = item
        xs, ys = _draw_source(source, n, config.trials, r)
        ks, ls = np.empty(config.trials, int), np.empty(config.trials, int)
        for t in range(config.trials):
            k, idx = encoder_phi(xs[t], book, p_ux, config.typ_delta)
            got = transmit_bin(idx, config.transport, g, r, n, book.n1, spec.power, spec.sigma_sq, code)
            ks[t] = k
            ls[t] = decoder_psi(ys[t], got, book, p_uy, config.typ_delta, config.decoder_typicality)
        return ks, ls

    results = parallel_map(one_state, list(zip(states, split(r_run, len(states)))), threads)
    dis = np.array([float(np.mean(k != l)) for k, l in results])
    all_k = np.concatenate([k for k, _ in results])
    _, counts = np.unique(all_k, return_counts=True)
    size = book.n1 * book.n2 + 1
    exponent = n * (source.h_x + config.mu + 1)
    return ProtocolOutcome(
        per_state_disagreement=dis,
        outage_fraction=float(np.mean(dis > config.alpha_target)),
        entropy_rate_estimate=entropy(counts / counts.sum()) / n,
        k_alphabet_size=size,
        n1=book.n1,
        n2=book.n2,
        cardinality_exponent=exponent,
        cardinality_ok=bool(math.log2(size) <= exponent),
        encoder_hit_rate=float(np.mean(all_k != RESERVE)),
        states=states,
        state_rates=rates,
    )
