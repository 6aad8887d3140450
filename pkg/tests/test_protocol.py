import math

import numpy as np
import pytest

from outage_cr.channel import PointMass, RayleighIid
from outage_cr.compound import CompoundFamily, build_code
from outage_cr.cr import JointSource, TestChannel, dsbs
from outage_cr.outage import OutageSpec
from outage_cr.protocol import (
    RESERVE,
    BinCodebook,
    GenieBitPipe,
    PhysicalCompound,
    ProtocolConfig,
    bin_sizes,
    decoder_psi,
    encoder_phi,
    generate_codebook,
    joint_type,
    joint_typicality,
    nearest_type,
    run_protocol,
    transmit_bin,
)
from outage_cr.rng import derive

EQUAL = JointSource([[0.5, 0.0], [0.0, 0.5]])
IDENT = TestChannel(np.eye(2))
SPEC = OutageSpec(eta=0.1, power=1.0)

# end-to-end setting shared with the acceptance run
PROTO_SRC = dsbs(0.05)
PROTO_AUX = TestChannel([[0.98, 0.02], [0.02, 0.98]])
PROTO_SPEC = OutageSpec(eta=0.1, power=1000.0)
PROTO_MU = 0.3
PROTO_DELTA = 0.15


def _book(words, n2, reserve_symbol=0, u_card=2):
    words = np.asarray(words)
    n = words.shape[1]
    u_type = tuple(np.bincount(words[0], minlength=u_card) / n)
    return BinCodebook(words, np.full(n, reserve_symbol), len(words) // n2, n2, u_type)


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(0, 0.1)
    with pytest.raises(ValueError, match="alpha_target"):
        ProtocolConfig(4, 0.1, alpha_target=1.0)
    with pytest.raises(ValueError, match="type"):
        ProtocolConfig(4, 0.1, u_type=(0.3, 0.7))
    ProtocolConfig(4, 0.1, u_type=(0.25, 0.75))


def test_nearest_type_and_bin_sizes():
    assert nearest_type([0.34, 0.66], 4) == (0.25, 0.75)
    assert sum(nearest_type([0.2, 0.3, 0.5], 7)) == pytest.approx(1.0)
    assert bin_sizes(1.0, 1.0, 12, 0.3) == (1782, 27)
    assert bin_sizes(0.0, 0.0, 1, 0.1) == (1, 1)


def test_codebook_exact_type():
    cfg = ProtocolConfig(4, 0.3, u_type=(0.5, 0.5))
    book = generate_codebook(cfg, IDENT, EQUAL, derive(0, "cb"))
    assert np.all(book.words.sum(axis=1) == 2)
    assert book.n1 * book.n2 == len(book.words)


def test_degenerate_codebook():
    cfg = ProtocolConfig(1, 0.1)
    const = TestChannel([[1.0, 0.0], [1.0, 0.0]])
    book = generate_codebook(cfg, const, EQUAL, derive(0, "one"))
    assert (book.n1, book.n2) == (1, 1) and len(book.words) == 1
    assert book.sequence(RESERVE).shape == (1,)


def test_codebook_first_symbol_marginal():
    cfg = ProtocolConfig(10, 0.4, u_type=(0.3, 0.7))
    aux = TestChannel([[0.4, 0.6], [0.2, 0.8]])
    first = np.concatenate([generate_codebook(cfg, aux, EQUAL, derive(1, "marg", k)).words[:, 0]
                            for k in range(3)])
    m = len(first)
    assert m >= 10_000
    assert abs(np.mean(first == 1) - 0.7) <= 3 * math.sqrt(0.21 / m)


def test_codebook_cap():
    cfg = ProtocolConfig(12, 0.3, max_codewords=100)
    with pytest.raises(ValueError, match="cap"):
        generate_codebook(cfg, IDENT, EQUAL, derive(0, "cap"))


def test_joint_typicality_examples():
    rng = derive(2, "typ")
    # every cell has p(1 - p) small enough that delta = 0.05 is about 2.5 standard errors at n = 200
    pmf = np.array([[0.92, 0.04], [0.02, 0.02]])
    hits = 0
    for _ in range(1000):
        flat = rng.choice(4, size=200, p=pmf.ravel())
        u, x = np.divmod(flat, 2)
        hits += joint_typicality(x, u, pmf, 0.05)
    assert hits / 1000 >= 0.9
    u = rng.integers(0, 2, 400)
    assert not joint_typicality(np.zeros(400, int), u, np.full((2, 2), 0.25), 0.05)
    assert joint_typicality(np.zeros(5, int), np.ones(5, int), pmf, 1.0)
    assert joint_type([0, 1], [1, 1], 2, 2).tolist() == [[0, 0.5], [0, 0.5]]


def test_encoder_exact_match_and_fallback():
    x = np.array([0, 1, 1, 0, 1, 0])
    other = 1 - x
    book = _book([other, other, x, other], n2=2)
    pmf = np.diag([0.5, 0.5])
    k, idx = encoder_phi(x, book, pmf, 0.01)
    assert (k, idx) == (2, 2)
    book = _book([other, other], n2=1)
    assert encoder_phi(x, book, pmf, 0.01) == (RESERVE, 3)


def test_encoder_first_scan_tie_break():
    x = np.array([0, 1, 0, 1])
    other = 1 - x
    # bins of 2: typical words at (bin 1, slot 2) and (bin 2, slot 1)
    book = _book([other, x, x, other], n2=2)
    k, idx = encoder_phi(x, book, np.diag([0.5, 0.5]), 0.01)
    assert (k, idx) == (1, 1)


def test_decoder_branches():
    y = np.array([0, 1, 0, 1])
    other = 1 - y
    pmf = np.diag([0.5, 0.5])
    single = _book([other, y], n2=2)
    assert decoder_psi(y, 1, single, pmf, 0.01) == 1
    double = _book([y, y], n2=2)
    assert decoder_psi(y, 1, double, pmf, 0.01) == RESERVE
    assert decoder_psi(y, 2, single, pmf, 0.01) == RESERVE
    with pytest.raises(ValueError):
        decoder_psi(y, 3, single, pmf, 0.01)


def test_encoder_decoder_deterministic():
    cfg = ProtocolConfig(12, PROTO_MU, PROTO_DELTA)
    book = generate_codebook(cfg, PROTO_AUX, PROTO_SRC, derive(3, "det"))
    from outage_cr.protocol import aux_joint

    p_ux, p_uy = aux_joint(PROTO_SRC, PROTO_AUX)
    x = derive(3, "x").integers(0, 2, 12)
    a = encoder_phi(x, book, p_ux, PROTO_DELTA)
    assert a == encoder_phi(x, book, p_ux, PROTO_DELTA)
    assert decoder_psi(x, a[1], book, p_uy, PROTO_DELTA) == decoder_psi(x, a[1], book, p_uy, PROTO_DELTA)


def test_genie_identity_when_rate_supported():
    rng = derive(4, "g")
    got = [transmit_bin(i, GenieBitPipe(), [[10.0]], rng, 10, 20) for i in range(1, 22)]
    assert got == list(range(1, 22))


def test_genie_failure_rate():
    rng = derive(5, "g")
    n1 = 15
    got = np.array([transmit_bin(3, GenieBitPipe(), [[0.1]], rng, 1, n1) for _ in range(1000)])
    assert np.all((got >= 1) & (got <= n1 + 1))
    assert np.mean(got != 3) == 1.0  # the wrong-index model never returns the sent index
    with pytest.raises(ValueError):
        transmit_bin(0, GenieBitPipe(), [[1.0]], rng, 1, n1)


def test_physical_noiseless_identity():
    fam = CompoundFamily((np.array([[2.0]]),), 2.0, 1.0)
    tr = PhysicalCompound(block_length=16, family=fam, q=np.array([[1.0]]), noiseless=True)
    code = build_code(tr, 2, derive(6, "pc"))
    rng = derive(6, "send")
    assert [transmit_bin(i, tr, [[2.0]], rng, 16, 1, physical_code=code) for i in (1, 2)] == [1, 2]


def test_run_protocol_x_equals_y():
    aux = TestChannel([[0.95, 0.05], [0.05, 0.95]])
    cfg = ProtocolConfig(12, 0.3, 0.1, 0.1, trials=100, n_states=20)
    out = run_protocol(EQUAL, aux, cfg, PointMass([[30.0]]), SPEC, derive(0, "xy"))
    assert np.mean(out.per_state_disagreement <= cfg.alpha_target) >= 0.9
    assert out.k_alphabet_size == out.n1 * out.n2 + 1 and out.cardinality_ok


def test_run_protocol_forced_failure_control():
    cfg = ProtocolConfig(12, PROTO_MU, PROTO_DELTA, 0.1, trials=100, n_states=5,
                         transport=GenieBitPipe(force_failure=True), decoder_typicality=False)
    out = run_protocol(PROTO_SRC, PROTO_AUX, cfg, RayleighIid(1, 1), PROTO_SPEC, derive(1, "ctl"))
    # agreement needs u0 on both sides; a forced wrong index is never N1 + 1 when the
    # encoder missed, and with N2 = 1 every real bin decodes to its word
    assert out.n2 == 1 and 0 < out.encoder_hit_rate < 1
    assert np.all(out.per_state_disagreement == 1.0)


def test_run_protocol_degenerate_always_agrees():
    const = TestChannel([[1.0, 0.0], [1.0, 0.0]])
    cfg = ProtocolConfig(3, 0.1, 1.0, trials=30, n_states=3)
    out = run_protocol(dsbs(0.2), const, cfg, PointMass([[10.0]]), SPEC, derive(2, "deg"))
    assert (out.n1, out.n2) == (1, 1)
    assert np.all(out.per_state_disagreement == 0.0)


def test_run_protocol_thread_invariant():
    cfg = ProtocolConfig(12, PROTO_MU, PROTO_DELTA, 0.1, trials=20, n_states=4)
    a = run_protocol(PROTO_SRC, PROTO_AUX, cfg, RayleighIid(1, 1), PROTO_SPEC, derive(3, "thr"), threads=1)
    b = run_protocol(PROTO_SRC, PROTO_AUX, cfg, RayleighIid(1, 1), PROTO_SPEC, derive(3, "thr"), threads=3)
    assert np.array_equal(a.per_state_disagreement, b.per_state_disagreement)
    assert a.entropy_rate_estimate == b.entropy_rate_estimate


def _median_disagreement(n, delta, seed=11):
    cfg = ProtocolConfig(n, PROTO_MU, delta, 0.1, trials=200, n_states=20)
    out = run_protocol(PROTO_SRC, PROTO_AUX, cfg, RayleighIid(1, 1), PROTO_SPEC, derive(seed, "inv"))
    return float(np.median(out.per_state_disagreement))


@pytest.mark.slow
def test_disagreement_nonincreasing_in_typ_delta():
    meds = [_median_disagreement(12, d) for d in (0.02, 0.05, 0.1)]
    assert meds[0] >= meds[1] >= meds[2], meds


@pytest.mark.slow
def test_disagreement_nonincreasing_in_block_length():
    meds = [_median_disagreement(n, PROTO_DELTA) for n in (8, 12, 16)]
    assert meds[0] >= meds[1] >= meds[2], meds
