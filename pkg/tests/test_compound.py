import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outage_cr.channel import complex_normal, log_det_mi, operator_norm
from outage_cr.compound import (
    CompoundFamily,
    ThresholdDecoderSpec,
    backoff_covariance,
    beta_hat,
    build_code,
    apply_code,
    chernoff_info_density_bound,
    compound_code_bound,
    compound_code_bound_closed,
    compound_code_parameters,
    degrade_to_ball,
    empirical_info_density_tail,
    empirical_output_power,
    empirical_power_overflow,
    epsilon_net,
    feinstein_compound_bound,
    gain_for_rate,
    generate_codebook,
    info_density,
    info_density_matrix,
    likelihood_ratio_bound,
    likelihood_ratio_exponent,
    output_power_threshold,
    perturb_to_nonsingular,
    power_overflow_bound,
    simulate_compound_error,
    threshold_decode,
    verify_bounds,
)
from outage_cr.protocol import PhysicalCompound
from outage_cr.rng import derive

# frozen hand-evaluated values
CHERNOFF_N100 = 1.966e-5  # 2^(-100 * 0.15636)
OVERFLOW_EXAMPLE = 0.046490  # (2 * 2^(-1/ln2))^10
FEINSTEIN_EXAMPLE = 0.6879820362146392  # |G'|=1, R=0.5, theta=0.5, n=200, beta=P/4, P=2


def test_chernoff_known_value():
    assert chernoff_info_density_bound(100, 1, 1.0) == pytest.approx(CHERNOFF_N100, rel=1e-3)
    assert chernoff_info_density_bound(100, 1, 0.0) == 1.0


@given(n=st.integers(1, 200), n_rx=st.integers(1, 4), delta=st.floats(0.01, 5.0))
def test_chernoff_doubling_n_squares(n, n_rx, delta):
    b = chernoff_info_density_bound(n, n_rx, delta)
    assert chernoff_info_density_bound(2 * n, n_rx, delta) == pytest.approx(b * b, rel=1e-9, abs=1e-300)


def test_power_overflow_known_value():
    assert power_overflow_bound(10, 1.0, 1.0) == pytest.approx(OVERFLOW_EXAMPLE, abs=1e-6)
    assert power_overflow_bound(10, 1.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        power_overflow_bound(10, 0.0, 1.0)


def test_beta_hat_positive_and_checked():
    assert beta_hat(0.1, 1.0) > 0
    with pytest.raises(ValueError):
        beta_hat(1.0, 1.0)


def test_feinstein_example_and_closed_form():
    p, beta = 2.0, 0.5
    bound = compound_code_bound(1, 200, 0.5, 0.5, p, 1, beta=beta)
    closed = compound_code_bound_closed(1, 200, 0.5, p, 1, beta=beta)
    assert bound == pytest.approx(FEINSTEIN_EXAMPLE, rel=1e-9)
    # tau 2^-alpha = floor(2^100) 2^-125 is within float rounding of 2^-25
    assert closed == pytest.approx(bound, rel=1e-9)
    prm = compound_code_parameters(200, 0.5, 0.5)
    manual = (prm["tau"] * 2.0 ** -prm["alpha"] + 2.0 ** -prm["delta"]
              + 2.0 ** (-200 * beta_hat(beta, p)) + chernoff_info_density_bound(200, 1, 0.125))
    assert bound == pytest.approx(manual, rel=1e-12)


def test_feinstein_empty_family_and_monotone():
    assert feinstein_compound_bound(0, 10, 5.0, 2.0, 20, 0.1, 0.5) == 0.0
    vals = [compound_code_bound(k, 100, 0.5, 0.5, 1.0, 1) for k in range(1, 8)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        feinstein_compound_bound(3, 10, 5.0, 2.0, 20, 0.1, [0.5, 0.5])


def test_likelihood_ratio_bound_properties():
    g = np.array([[0.5, 0.2j]])
    assert likelihood_ratio_bound(g, g, 10, 1.0, 6.0, 1.0, 1.0) == 1.0
    e1 = likelihood_ratio_exponent(0.1, 10, 1.0, 6.0, 1.0, 1.0)
    e2 = likelihood_ratio_exponent(0.2, 10, 1.0, 6.0, 1.0, 1.0)
    assert e2 == pytest.approx(2 * e1)  # doubled distance squares the bound


def test_output_power_threshold_values():
    rho, factor = output_power_threshold(1.0, 1.0, 1, 1.0)
    assert rho == 6.0
    assert factor == pytest.approx(2 * 2 ** (-1 / math.log(2)), rel=1e-12)
    assert factor == pytest.approx(0.73576, abs=1e-5)


def test_info_density_origin_example():
    # 1x1, g = 1, Q = 1, zero blocks: n log2(2) bits
    assert info_density([[1.0]], [[1.0]], np.zeros(5), np.zeros(5), 1.0) == pytest.approx(5.0)


def test_info_density_matrix_matches_scalar():
    rng = derive(0, "idm")
    g = complex_normal(rng, (2, 2))
    q = np.diag([0.6, 0.4])
    words = complex_normal(rng, (3, 2, 6))
    z = complex_normal(rng, (4, 2, 6))
    mat = info_density_matrix(g, q, words, z, 0.8)
    for t in range(4):
        for l in range(3):
            assert mat[t, l] == pytest.approx(info_density(g, q, words[l], z[t], 0.8), abs=1e-9)


def test_info_density_mean_and_change_of_measure():
    rng = derive(1, "mean")
    g = np.array([[1.0, 0.5]])
    q = np.diag([0.7, 0.3])
    n, trials = 4, 10_000
    root = np.linalg.cholesky(q)
    t = root @ complex_normal(rng, (trials, 2, n))
    z = g @ t + complex_normal(rng, (trials, 1, n))
    dens = np.array([info_density(g, q, t[k], z[k], 1.0) for k in range(trials)])
    target = n * log_det_mi(g, q, 1.0)
    assert abs(dens.mean() - target) <= 3 * dens.std() / math.sqrt(trials)
    # outputs independent of the input: E[2^i] = 1
    z_ind = z[np.roll(np.arange(trials), 1)]
    ratio = np.array([2.0 ** info_density(g, q, t[k], z_ind[k], 1.0) for k in range(trials)])
    assert abs(ratio.mean() - 1) <= 4 * ratio.std() / math.sqrt(trials)


def test_info_density_rejects_mismatched_blocks():
    with pytest.raises(ValueError):
        info_density([[1.0]], [[1.0]], np.zeros(4), np.zeros(5), 1.0)


def test_codebook_power_and_covariance():
    q1 = np.diag([0.5, 0.4])
    book = generate_codebook(64, 10, q1, 1.0, derive(2, "book"))
    energy = np.sum(np.abs(book.codewords) ** 2, axis=(1, 2)) / 10
    assert np.all(energy <= 1.0)
    assert book.tau == 64 and book.block_length == 10
    with pytest.raises(ValueError):
        generate_codebook(4, 10, np.diag([1.0, 0.0]), 1.0, derive(2, "sing"))


def test_family_rejects_large_states():
    with pytest.raises(ValueError, match="exceeds"):
        CompoundFamily(([[2.0]],), 1.0, 1.0)


def test_perturb_to_nonsingular_beamformer():
    v = np.array([1.0, 1.0j]) / math.sqrt(2)
    q = np.outer(v, v.conj())
    fam = CompoundFamily((np.array([[0.8, 0.3]]),), 1.0, 1.0)
    out = perturb_to_nonsingular(q, 0.05, fam, 1.0)
    assert np.linalg.eigvalsh(out).min() > 0
    assert np.trace(out).real < 1.0
    assert fam.min_rate(q) - fam.min_rate(out) <= 0.05
    q2 = np.diag([0.3, 0.3])
    assert np.array_equal(perturb_to_nonsingular(q2, 0.05, fam, 1.0), q2)


def test_backoff_covariance_trace():
    q = backoff_covariance(np.diag([0.6, 0.4]), 0.1, 1.0)
    assert np.trace(q).real == pytest.approx(0.9)


def test_epsilon_net_small_disc():
    net = epsilon_net(1.0, 1, 1, 1.0 - 1e-9)
    assert 1 < len(net) <= 16
    assert len(epsilon_net(1.0, 1, 1, 2.0)) == 1


@pytest.mark.parametrize("shape,mu", [((1, 1), 0.3), ((2, 1), 0.9)])
def test_epsilon_net_coverage(shape, mu):
    n_rx, n_tx = shape
    net = np.array(epsilon_net(1.0, n_tx, n_rx, mu))
    assert np.all(np.linalg.norm(net, ord=2, axis=(1, 2)) <= 1.0 + 1e-9)
    rng = derive(3, "net", mu)
    for _ in range(1000):
        g = complex_normal(rng, (n_rx, n_tx))
        g *= rng.uniform() / operator_norm(g)
        dist = np.linalg.norm(net - g, ord=2, axis=(1, 2)).min()
        assert dist <= mu + 1e-9


def test_epsilon_net_cap():
    with pytest.raises(ValueError, match="cap"):
        epsilon_net(1.0, 2, 2, 0.05, cap=1000)


def test_degrade_to_ball_noise_level():
    rng = derive(4, "deg")
    g = np.array([[3.0]])
    t = np.ones((1, 50_000))
    z = g @ t + complex_normal(rng, t.shape, 1.0)
    z2, g2 = degrade_to_ball(z, g, 1.0, 1.0, rng)
    assert np.allclose(g2, [[1.0]])
    w = z2 - g2 @ t
    assert np.mean(np.abs(w) ** 2) == pytest.approx(1.0, rel=0.03)


def _small_code(tau, n, gain, rng, theta=0.5):
    q1 = np.array([[0.9]])
    book = generate_codebook(tau, n, q1, 1.0, rng)
    prm = compound_code_parameters(n, math.log2(tau) / n, theta)
    fam = CompoundFamily((np.array([[gain]]),), max(gain, 1.0), 1.0)
    return book, ThresholdDecoderSpec(prm["alpha"], prm["delta"], q1, 1.0), fam


def test_noiseless_two_words_decode():
    book, dec, fam = _small_code(2, 20, 3.0, derive(5, "nl"))
    res = simulate_compound_error(book, dec, fam, 40, derive(5, "run"), noiseless=True)
    assert res[0]["max_error"] == 0.0


def test_decoder_deterministic():
    rng = derive(6, "det")
    book, dec, fam = _small_code(4, 12, 2.0, rng)
    z = complex_normal(rng, (5, 1, 12))
    assert np.array_equal(threshold_decode(z, book, dec, fam), threshold_decode(z, book, dec, fam))


def test_rate_above_capacity_fails():
    # rate 2 bits against f = 1 bit: decoding should nearly always fail
    gain = gain_for_rate(1.0, 0.9)
    book, dec, fam = _small_code(2**8, 4, gain, derive(7, "neg"))
    res = simulate_compound_error(book, dec, fam, 512, derive(7, "run"))
    assert res[0]["mean_error"] > 0.9


def test_rate_below_capacity_within_bound():
    n, theta, rate = 40, 2.0, 0.25
    q1 = np.array([[0.5]])
    gain = gain_for_rate(rate + theta + 0.01, 0.5)
    tau = int(2 ** (n * rate))
    book = generate_codebook(tau, n, q1, 1.0, derive(8, "pos"))
    prm = compound_code_parameters(n, rate, theta)
    fam = CompoundFamily((np.array([[gain]]),), gain, 1.0)
    dec = ThresholdDecoderSpec(prm["alpha"], prm["delta"], q1, 1.0)
    bound = compound_code_bound(1, n, rate, theta, 1.0, 1, beta=0.5)
    assert bound < 1
    res = simulate_compound_error(book, dec, fam, 2048, derive(8, "run"))
    assert res[0]["max_error"] <= bound + res[0]["ci_half_width"]


def test_simulation_independent_of_threads():
    book, dec, fam = _small_code(8, 10, 2.0, derive(9, "thr"))
    states = [np.array([[2.0]]), np.array([[1.5]]), np.array([[2.5]])]
    a = simulate_compound_error(book, dec, fam, 64, derive(9, "r"), states=states, threads=1)
    b = simulate_compound_error(book, dec, fam, 64, derive(9, "r"), states=states, threads=3)
    assert a == b


def test_physical_code_noiseless_identity():
    fam = CompoundFamily((np.array([[2.0]]),), 2.0, 1.0)
    tr = PhysicalCompound(block_length=16, family=fam, q=np.array([[1.0]]), noiseless=True)
    code = build_code(tr, 2, derive(10, "pc"))
    rng = derive(10, "send")
    assert [apply_code(code, m, [[2.0]], tr, rng) for m in (0, 1)] == [0, 1]


def test_empirical_harnesses_respect_bounds():
    rng = derive(11, "emp")
    cov = np.diag([0.5, 0.5])
    assert empirical_power_overflow(cov, 10, 1.0, 100_000, rng) <= OVERFLOW_EXAMPLE
    g = np.array([[0.7]])
    assert empirical_info_density_tail(g, [[1.0]], 10, 1.0, 1.0, 20_000, rng) <= \
        chernoff_info_density_bound(10, 1, 1.0) + 0.005
    rho, factor = output_power_threshold(1.0, 1.0, 1, 1.0)
    assert empirical_output_power([[1.0]], np.ones((1, 2)), 1.0, rho, 50_000, rng) <= factor**2


def test_verify_bounds_default_grid():
    rows = verify_bounds(derive(12, "vb"), trials=20_000, ratio_trials=500)
    assert len(rows) == 12
    assert {r["bound_name"] for r in rows} == {"info-density-chernoff", "power-overflow",
                                                "likelihood-ratio", "output-power"}
    assert all(r["passed"] for r in rows)
