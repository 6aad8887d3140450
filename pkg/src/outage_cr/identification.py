"""Toy identification codes built on top of the common-randomness protocol.

Each identity i owns a random coloring E_i of the CR alphabet. The sender of
identity i runs the protocol to obtain K, ships the bin index in a first stage
and the color E_i(K) in a short second stage. A receiver interested in
identity j computes L and accepts iff the received color equals E_j(L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import FadingEnsemble, check_covariance, log_det_mi, sample_states
from .cr import JointSource, TestChannel
from .outage import wilson_half_width
from .protocol import (RESERVE, BinCodebook, GenieBitPipe, ProtocolConfig, _draw_source, _wrong_index,
                       aux_joint, decoder_psi, encoder_phi, generate_codebook, transmit_bin)
from .rng import as_generator, parallel_map, split


@dataclass(frozen=True)
class ColoringFamily:
    colorings: np.ndarray  # (N, M') colors in 0..M''-1; column 0 colors u0
    m_double_prime: int

    def __post_init__(self):
        c = np.asarray(self.colorings)
        if c.ndim != 2 or c.min() < 0 or c.max() >= self.m_double_prime:
            raise ValueError("colorings must map every K value into 0..M''-1")

    @property
    def n_identities(self) -> int:
        return self.colorings.shape[0]

    @property
    def m_prime(self) -> int:
        return self.colorings.shape[1]

    def color(self, identity: int, label: int) -> int:
        return int(self.colorings[identity, label - RESERVE])


@dataclass
class IdOutcome:
    e1_per_state: np.ndarray
    e2_per_state: np.ndarray
    identity_count: int
    second_stage_messages: int
    second_stage_length: int
    lambda1: float
    lambda2: float
    outage_e1: float
    outage_e2: float
    measured_lambda1: float
    measured_lambda2: float
    ci_half_width: float

    @property
    def lambda_sum_ok(self) -> bool:
        return self.measured_lambda1 + self.measured_lambda2 < 1


def build_colorings(n_identities: int, m_prime: int, m_double_prime: int,
                    rng: np.random.Generator) -> ColoringFamily:
    """I.i.d. uniform maps from the CR alphabet (size M') to M'' colors."""
    if min(n_identities, m_prime, m_double_prime) < 1:
        raise ValueError("arguments must be positive")
    cols = rng.integers(0, m_double_prime, size=(n_identities, m_prime))
    cols.setflags(write=False)
    return ColoringFamily(cols, m_double_prime)


def second_stage_size(n: int, rate_delta: float) -> tuple[int, int]:
    """(length ceil(sqrt n), message count 2^ceil(delta sqrt n), at least 2)."""
    length = math.ceil(math.sqrt(n))
    return length, max(2, 2 ** math.ceil(rate_delta * math.sqrt(n)))


@dataclass(frozen=True)
class TwoStageTransport:
    """First stage carries the bin index, second stage the color.

    Both stages use the genie rule: a stage succeeds iff its rate is at most
    the instantaneous log-det rate. ``noiseless`` delivers both always.
    """

    noiseless: bool = True
    q: np.ndarray | None = None
    second_stage_length: int | None = None


def _color_received(color: int, m2: int, transport: TwoStageTransport, g, length: int, power: float,
                    sigma_sq: float, rng) -> int:
    if transport.noiseless:
        return color
    g = np.atleast_2d(g)
    q = np.eye(g.shape[1]) * (power / g.shape[1]) if transport.q is None else check_covariance(transport.q)
    if math.log2(m2) / length <= log_det_mi(g, q, sigma_sq):
        return color
    return _wrong_index(color + 1, m2, rng) - 1


def id_round(identity_sent: int, identity_tested: int, x_seq, y_seq, codebook: BinCodebook,
             joints, config: ProtocolConfig, family: ColoringFamily, transport: TwoStageTransport,
             g, rng: np.random.Generator, power: float = 1.0, sigma_sq: float = 1.0) -> bool:
    """One identification attempt; True when the receiver accepts."""
    n_id = family.n_identities
    if not (0 <= identity_sent < n_id and 0 <= identity_tested < n_id):
        raise ValueError("identity out of range")
    p_ux, p_uy = joints
    k, idx = encoder_phi(x_seq, codebook, p_ux, config.typ_delta)
    if transport.noiseless:
        got = idx
    else:
        got = transmit_bin(idx, GenieBitPipe(transport.q), g, rng, config.block_length_n, codebook.n1,
                           power, sigma_sq)
    l = decoder_psi(y_seq, got, codebook, p_uy, config.typ_delta, config.decoder_typicality)
    length = transport.second_stage_length or math.ceil(math.sqrt(config.block_length_n))
    color = _color_received(family.color(identity_sent, k), family.m_double_prime, transport, g,
                            length, power, sigma_sq, rng)
    return color == family.color(identity_tested, l)


def estimate_id_errors(source: JointSource, aux_channel: TestChannel, config: ProtocolConfig,
                       ensemble: FadingEnsemble, spec, n_identities: int, m_double_prime: int,
                       rng, transport: TwoStageTransport | None = None, lambda1: float = 0.25,
                       lambda2: float = 0.5, threads: int = 1) -> IdOutcome:
    """Max-over-identities errors of the first and second kind per sampled state.

    Every trial draws one source block and evaluates all (sent, tested)
    identity pairs on it, so E1 and E2 share the same K and L draws.
    """
    rng = as_generator(rng)
    transport = transport or TwoStageTransport()
    r_book, r_col, r_states, r_run = split(rng, 4)
    book = generate_codebook(config, aux_channel, source, r_book)
    family = build_colorings(n_identities, book.n1 * book.n2 + 1, m_double_prime, r_col)
    joints = aux_joint(source, aux_channel)
    states = sample_states(ensemble, r_states, config.n_states)
    n = config.block_length_n
    length = transport.second_stage_length or math.ceil(math.sqrt(n))
    m2 = m_double_prime
    ids = np.arange(n_identities)

    def one_state(item):
        g, r = item
        xs, ys = _draw_source(source, n, config.trials, r)
        accept = np.zeros((n_identities, n_identities))
        for t in range(config.trials):
            k, idx = encoder_phi(xs[t], book, joints[0], config.typ_delta)
            got = idx if transport.noiseless else transmit_bin(
                idx, GenieBitPipe(transport.q), g, r, n, book.n1, spec.power, spec.sigma_sq)
            l = decoder_psi(ys[t], got, book, joints[1], config.typ_delta, config.decoder_typicality)
            sent = family.colorings[ids, k - RESERVE]
            recv = np.array([_color_received(int(c), m2, transport, g, length, spec.power,
                                             spec.sigma_sq, r) for c in sent])
            accept += recv[:, None] == family.colorings[ids, l - RESERVE][None, :]
        accept /= config.trials
        e1 = float(np.max(1 - np.diag(accept)))
        off = accept[~np.eye(n_identities, dtype=bool)]
        e2 = float(off.max()) if off.size else 0.0
        return e1, e2

    res = parallel_map(one_state, list(zip(states, split(r_run, len(states)))), threads)
    e1 = np.array([a for a, _ in res])
    e2 = np.array([b for _, b in res])
    return IdOutcome(
        e1_per_state=e1,
        e2_per_state=e2,
        identity_count=n_identities,
        second_stage_messages=m2,
        second_stage_length=length,
        lambda1=lambda1,
        lambda2=lambda2,
        outage_e1=float(np.mean(e1 > lambda1)),
        outage_e2=float(np.mean(e2 > lambda2)),
        measured_lambda1=float(e1.max()),
        measured_lambda2=float(e2.max()),
        ci_half_width=wilson_half_width(0.5, config.trials),
    )
