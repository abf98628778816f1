"""Acceptance criteria, one marked test (or group) per criterion.

A PASS/FAIL line per criterion is printed at the end of the run.
Expected formula values were computed with mpmath at 40 digits and frozen.
"""

import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablepriv.binary import (
    binary_cutoff_raw,
    check_counting_lemma,
    answer_binary_queries,
    plan_binary,
    score_binary,
)
from stablepriv.cli import main
from stablepriv.core import (
    BOTTOM,
    EXHAUSTED,
    TOP,
    NoiseSource,
    PrivacyParams,
    child_rng,
)
from stablepriv.label_private import a_priv
from stablepriv.learners import (
    LEARNERS,
    SgdConfig,
    bernoulli_sampler,
    gen_margin_conditional,
    gen_margin_data,
    gen_threshold_data,
    margin_conditional_sampler,
    margin_sampler,
    threshold_sampler,
)
from stablepriv.mechanisms import SparseVecConfig, a_stab, sparse_vec_alpha, sparse_vec_lambda, sparse_vec_run, stab_threshold
from stablepriv.oqr import oqr_lambda, oqr_open, oqr_threshold
from stablepriv.softlabel import (
    SlcAux,
    Stage,
    a_prvlearn,
    a_slc,
    h_priv_from_scores,
    open_slc_session,
    slc_k,
    slc_lambda,
    slc_threshold,
    snap_gamma,
    soft_accuracy_bound,
    soft_gamma_raw,
)
from stablepriv.stability_lab import (
    concentration_check,
    efron_stein_check,
    estimate_on_avg_stability,
    label_mean_alpha_sq,
    max_label,
    mean_label,
    quality_probe,
    sgd_reduction_probe,
    zero_estimator,
)
from stablepriv.subsample import answer_votes, compute_k, compute_k_raw
from stablepriv.learners import ConstantClassifier

RTOL = 1e-9

# (m, T, epsilon, delta, beta) -> sparse lambda, sparse alpha, oqr lambda, oqr w,
# k (raw), Gamma, soft lambda, soft w
FORMULA_CASES = [
    ((1000, 60, 1.0, 1e-5, 0.05),
     (148.67688755399354, 8736.8363069922695, 153.08709769088293, 5852.1608854530845,
      87967.933352357026, 11.512925464970228, 216.49784977878156, 4288.1675208699994), 87968),
    ((100, 5, 1.0, 1e-3, 0.1),
     (33.245162725382199, 1224.7970576900216, 34.873261871048615, 851.33113556923382,
      12164.204871132902, 6.9077552789821371, 49.318239902225488, 636.16681793465583), 12165),
    ((200, 10, 1.0, 1e-6, 0.1),
     (66.490325450764397, 2818.2947683457274, 68.137878425496565, 2699.2105233725009,
      37354.157046841872, 13.815510557964274, 96.361511780666353, 1975.4227751320482), 37355),
    ((20, 1, 4.0, 0.1, 0.1),
     (2.1459660262893472, 51.429917463243279, 2.4477468306808165, 29.331176712640074,
      434.16506518613134, 0.57564627324851142, 3.4616367652045707, 23.13969771761294), 435),
    ((10_000, 300, 0.5, 1e-8, 0.01),
     (841.04348316110912, 67998.164480315727, 856.72107030309038, 48531.823556824965,
      715149.46376168169, 36.841361487904731, 1211.5865567934243, 35156.989346225657), 715150),
]

# (m, alpha, gamma_opt, beta) -> raw cutoff, integer T
CUTOFF_CASES = [
    ((10_000, 0.1, 0.0, 0.05), 3741.129724845022, 3742),
    ((10_000, 0.01, 0.0, 0.05), 1041.1297248450219, 1042),
    ((500, 0.01, 0.0, 0.05), 158.95577736564244, 159),
    ((2000, 0.005, 0.01, 0.1), 388.54880333510827, 389),
    ((100_000, 0.001, 0.002, 0.01), 3593.1659887447049, 3594),
]

# (alpha, n', nu) -> 16 alpha sqrt(2n') + nu
GAMMA_CASES = [
    ((0.001, 100, 0.01), 0.23627416997969521),
    ((6.8e-4, 100, 0.00234), 0.15620643558619274),
    ((1e-3, 50, 0.0), 0.16),
    ((2e-4, 400, 0.05), 0.14050966799187808),
    ((0.002, 8, 0.1), 0.228),
]


# ---------------------------------------------------------------- 1


@pytest.mark.acceptance(1, "formula fidelity (lambda, w, k, T, Gamma, gamma) to 1e-9")
@pytest.mark.parametrize("args,expected,k_int", FORMULA_CASES)
def test_formula_fidelity_mechanisms(args, expected, k_int):
    m, T, eps, delta, beta = args
    params = PrivacyParams(eps, delta, T, m)
    got = (
        sparse_vec_lambda(T, eps, delta),
        sparse_vec_alpha(m, T, beta, eps, delta),
        oqr_lambda(params),
        oqr_threshold(params),
        compute_k_raw(m, T, eps, delta, beta),
        stab_threshold(eps, delta),
        slc_lambda(params),
        slc_threshold(params),
    )
    for g, e in zip(got, expected):
        assert g == pytest.approx(e, rel=RTOL)
    assert compute_k(m, T, eps, delta, beta) == k_int


@pytest.mark.acceptance(1, "formula fidelity (lambda, w, k, T, Gamma, gamma) to 1e-9")
@pytest.mark.parametrize("args,raw,T", CUTOFF_CASES)
def test_formula_fidelity_cutoff(args, raw, T):
    m, alpha, gamma_opt, beta = args
    assert binary_cutoff_raw(m, alpha, gamma_opt, beta) == pytest.approx(raw, rel=RTOL)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert plan_binary(m, alpha, gamma_opt, beta, 1.0, 1e-5).T == T


@pytest.mark.acceptance(1, "formula fidelity (lambda, w, k, T, Gamma, gamma) to 1e-9")
@pytest.mark.parametrize("args,expected", GAMMA_CASES)
def test_formula_fidelity_gamma(args, expected):
    assert soft_gamma_raw(*args) == pytest.approx(expected, rel=RTOL)
    assert soft_accuracy_bound(*args) == pytest.approx(expected / 2, rel=RTOL)


# ---------------------------------------------------------------- 2


@pytest.mark.acceptance(2, "zero-noise equivalence with deterministic threshold tests")
@settings(max_examples=1000, deadline=None)
@given(
    st.lists(st.floats(-50, 50, allow_nan=False), max_size=40),
    st.floats(-20, 20, allow_nan=False),
    st.integers(1, 6),
)
def test_zero_noise_sparse_vector(qs, w, T):
    out = sparse_vec_run(qs, SparseVecConfig(T, 1.0, 0.1, w), NoiseSource.zero())
    expected, c = [], 0
    for q in qs:
        if c > T:
            expected.append(EXHAUSTED)
        elif q > w:
            expected.append(TOP)
        else:
            expected.append(BOTTOM)
            c += 1
    assert out == expected


@pytest.mark.acceptance(2, "zero-noise equivalence with deterministic threshold tests")
@settings(max_examples=1000, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 2), min_size=1, max_size=25), min_size=1, max_size=15),
    st.floats(0, 20, allow_nan=False),
)
def test_zero_noise_oqr_release(vote_lists, w):
    params = PrivacyParams(1.0, 0.01, 3, 15)
    session = oqr_open(params, NoiseSource.zero(), threshold_w=w)
    c = 0
    for votes in vote_lists:
        counts = [votes.count(v) for v in (0, 1, 2)]
        order = sorted(range(3), key=lambda i: (-counts[i], i))
        mode = order[0]
        dist = max(0, counts[order[0]] - counts[order[1]] - 1)
        got = answer_votes(session, votes, (0, 1, 2))
        if c > 3:
            assert got is EXHAUSTED
        elif dist > w:
            assert got == mode
        else:
            assert got is BOTTOM
            c += 1


def _oracle_hist(scores, N, shifted):
    if shifted:
        edges = [((j + 0.5) / N, (j + 1.5) / N) for j in range(N - 1)]
    else:
        edges = [(j / N, (j + 1) / N) for j in range(N)]
    counts = [0] * len(edges)
    for s in scores:
        for j, (lo, hi) in enumerate(edges):
            if lo <= s < hi or (not shifted and j == N - 1 and s == 1.0):
                counts[j] += 1
                break
    return counts


def _oracle_mode(counts):
    best = max(range(len(counts)), key=lambda i: (counts[i], -i))
    rest = [c for i, c in enumerate(counts) if i != best]
    return best + 1, max(0, counts[best] - (max(rest) if rest else 0) - 1)


@pytest.mark.acceptance(2, "zero-noise equivalence with deterministic threshold tests")
@settings(max_examples=1000, deadline=None)
@given(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30),
    st.integers(2, 8),
    st.floats(0, 10, allow_nan=False),
)
def test_zero_noise_h_priv(scores, N, w):
    params = PrivacyParams(1.0, 0.1, 2, 10)
    aux = SlcAux.from_params(params, 1.0 / N, threshold_w=w)
    session = open_slc_session(params, aux, [ConstantClassifier(0.5)], NoiseSource.zero())
    ans = h_priv_from_scores(session, scores)
    v, dist = _oracle_mode(_oracle_hist(scores, N, False))
    if dist > w:
        assert ans.stage is Stage.FIRST
        assert ans.score == pytest.approx(float(Fraction(2 * v - 1, 2 * N)))
        return
    assert ans.stage is Stage.SECOND
    v, dist = _oracle_mode(_oracle_hist(scores, N, True))
    if dist > w:
        assert ans.score == pytest.approx(float(Fraction(v, N)))
    else:
        assert ans.is_bottom


# ---------------------------------------------------------------- 3


@pytest.mark.acceptance(3, "A_stab releases w.p. >= 1 - beta at the utility distance")
def test_stab_utility():
    eps, delta, beta, trials = 1.0, 0.01, 0.1, 10_000
    dist = math.ceil((math.log(1 / delta) + math.log(1 / beta)) / eps)
    gamma = math.log(1 / delta) / eps
    noise = NoiseSource.seeded(3)
    hits = sum(a_stab(1, dist, gamma, eps, noise).released for _ in range(trials))
    f = hits / trials
    sigma = math.sqrt(f * (1 - f) / trials)
    assert f >= (1 - beta) - 3 * sigma


# ---------------------------------------------------------------- 4


@pytest.mark.acceptance(4, "sparse vector answers L(alpha) correctly in >= 90/100 runs")
def test_sparse_vector_accuracy():
    m, T, beta, eps, delta = 200, 10, 0.1, 1.0, 1e-6
    w = 0.0
    alpha = sparse_vec_alpha(m, T, beta, eps, delta)
    config = SparseVecConfig(T, eps, delta, w)
    good = 0
    for run in range(100):
        above = np.r_[np.ones(m - T, dtype=bool), np.zeros(T, dtype=bool)]
        child_rng(4, run).shuffle(above)
        qs = np.where(above, w + alpha, w - alpha)
        out = sparse_vec_run(qs.tolist(), config, NoiseSource.seeded(run))
        good += all((o is TOP) == a and o is not EXHAUSTED for o, a in zip(out, above))
    assert good >= 90


# ---------------------------------------------------------------- 5


def _pigeonhole(P, y, B, xi):
    k = len(P)
    bad = 0
    for i in range(len(y)):
        wrong = sum(1 for j in range(k) if P[j][i] != y[i])
        bad += wrong > xi * k
    return bad < B / xi


@pytest.mark.acceptance(5, "counting lemma never violated over 10^3 instances")
def test_counting_lemma_random():
    rng = child_rng(5)
    violations = 0
    for _ in range(1000):
        k = int(rng.integers(1, 12))
        m = int(rng.integers(1, 40))
        B = int(rng.integers(1, m + 1))
        xi = float(rng.choice([0.5, 1 / 3, 0.25, 0.1, float(rng.uniform(0.01, 0.5))]))
        y = rng.integers(0, 2, m)
        P = np.tile(y, (k, 1))
        for j in range(k):
            cols = rng.choice(m, size=int(rng.integers(0, B + 1)), replace=False)
            P[j, cols] ^= 1
        got = check_counting_lemma(P, y, B, xi)
        assert got == _pigeonhole(P.tolist(), y.tolist(), B, xi)
        violations += not got
    assert violations == 0


# ---------------------------------------------------------------- 6 and 7


def _scaled_binary_plan(m, k=100, alpha=0.01, beta=0.05, delta=1e-5):
    """Plan with k fixed and epsilon chosen so that w = 2 lambda log(2m/delta) = k/6."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        T = plan_binary(m, alpha, 0.0, beta, 1.0, delta).T
        lam = (k / 6) / (2 * math.log(2 * m / delta))
        eps = math.sqrt(32 * T * math.log(2 / delta)) / lam
        plan = plan_binary(m, alpha, 0.0, beta, eps, delta).with_k(k)
    assert oqr_threshold(plan.privacy_params()) == pytest.approx(k / 6, rel=1e-12)
    return plan


@pytest.mark.acceptance(6, "binary pipeline: error <= 0.02 and bottoms <= T in >= 90% of 50 seeds")
def test_binary_pipeline_scaled():
    m = 500
    plan = _scaled_binary_plan(m)
    params = plan.privacy_params()
    assert plan.T == 159
    good = 0
    for s in range(50):
        data = gen_threshold_data(20_000, 0.5, 0.0, s)
        Q = child_rng(s, 6).random(m)
        answers = answer_binary_queries(
            data, LEARNERS["threshold-erm"], Q, plan, params, NoiseSource.seeded(s), seed=s
        )
        sc = score_binary(answers, (Q >= 0.5).astype(int))
        if sc.wrong + sc.bottoms <= plan.T:
            assert sc.misclassification_rate <= plan.T / m
        good += sc.answered_error_rate <= 0.02 and sc.bottoms <= plan.T
    assert good >= 45


@pytest.mark.acceptance(7, "label transfer: median holdout error <= 0.05 over 50 seeds")
def test_label_transfer_scaled():
    m = 2000
    plan = _scaled_binary_plan(m)
    params = plan.privacy_params()
    errors = []
    for s in range(50):
        data = gen_threshold_data(20_000, 0.5, 0.0, s)
        U = child_rng(s, 7).random(m)
        report = a_priv(
            data,
            LEARNERS["threshold-erm"],
            U,
            plan,
            params,
            NoiseSource.seeded(s),
            relabel_seed=s,
            seed=s,
            holdout=threshold_sampler(0.5, 0.0),
            holdout_seed=10_000 + s,
        )
        assert report.bottom_count <= plan.T + 1
        errors.append(report.holdout_error)
    assert float(np.median(errors)) <= 0.05


# ---------------------------------------------------------------- 8


@pytest.mark.acceptance(8, "Efron-Stein: equality for the mean, inequality for the panel")
def test_efron_stein_mean_equality():
    r = efron_stein_check(mean_label, bernoulli_sampler(0.5), 3, 100_000, seed=8)
    assert r.variance == pytest.approx(1 / 12, rel=0.05)
    assert r.bound == pytest.approx(1 / 12, rel=0.05)


@pytest.mark.acceptance(8, "Efron-Stein: equality for the mean, inequality for the panel")
@pytest.mark.parametrize("estimator", [mean_label, max_label, zero_estimator])
@pytest.mark.parametrize("p,n", [(0.5, 3), (0.25, 3), (0.5, 10)])
def test_efron_stein_panel(estimator, p, n):
    r = efron_stein_check(estimator, bernoulli_sampler(p), n, 20_000, seed=81)
    assert r.variance <= r.bound + 3 * math.hypot(r.variance_se, r.bound_se)


# ---------------------------------------------------------------- 9


@pytest.mark.acceptance(9, "label-mean alpha^2 matches 2p(1-p)/n^2 within 3 SE")
@pytest.mark.parametrize("p,n", [(0.5, 50), (0.25, 100)])
def test_label_mean_stability_oracle(p, n):
    est = estimate_on_avg_stability(LEARNERS["label-mean"], bernoulli_sampler(p), n, [0.5], 5000, seed=9)
    assert abs(est.alpha_sq_hat - label_mean_alpha_sq(p, n)) <= 3 * est.std_error


# ---------------------------------------------------------------- 10


@pytest.mark.acceptance(10, "concentration fraction >= 0.75 - 3 sigma")
def test_concentration_label_mean():
    n_prime = 100
    alpha = 1 / (n_prime * math.sqrt(2))
    assert alpha**2 == pytest.approx(label_mean_alpha_sq(0.5, n_prime))
    r = concentration_check(LEARNERS["label-mean"], bernoulli_sampler(0.5), n_prime, [0.5], alpha, 1000, seed=10)
    assert r.fraction >= 0.75 - 3 * r.std_error


# ---------------------------------------------------------------- 11


@pytest.mark.acceptance(11, "soft-label: all m=200 answered within 8a sqrt(2n') + nu/2 in >= 90%")
def test_soft_label_end_to_end():
    c, m, T, delta, beta, eps, n_prime = 1.0, 200, 1, 0.1, 0.1, 19.9, 100
    learner = LEARNERS["label-mean"]
    sampler = margin_conditional_sampler(c, c)
    params = PrivacyParams(eps, delta, T, m)
    k = slc_k(params, beta)
    assert k == 162
    est = estimate_on_avg_stability(learner, sampler, n_prime, [c], 20_000, seed=11)
    qual = quality_probe(learner, sampler, n_prime, [c], 2000, seed=12)
    assert qual.mean_score > 0.98
    gamma = snap_gamma(soft_gamma_raw(est.alpha_hat, n_prime, qual.nu_hat))
    bound = soft_accuracy_bound(est.alpha_hat, n_prime, qual.nu_hat)
    aux = SlcAux.from_params(params, gamma)
    good = 0
    for s in range(50):
        data = gen_margin_conditional(k * n_prime, c, c, s)
        Q = gen_margin_data(m, c, 500 + s).X
        session = a_prvlearn(data, learner, k, aux, params, NoiseSource.seeded(s))
        result = a_slc(session, Q)
        scores = result.scores()
        ok = result.released == m and all(abs(x - qual.mean_score) <= bound for x in scores)
        if all(step.stage is Stage.FIRST for step in result.trace):
            assert session.cost == 0
            assert all(step.counter == 0 for step in result.trace)
        good += ok
    assert good >= 45


# ---------------------------------------------------------------- 12


@pytest.mark.acceptance(12, "SGD reduction: on-avg <= 1.25 * uniform + 3 sigma at n=200")
def test_sgd_reduction():
    r = sgd_reduction_probe(margin_sampler(1.0), SgdConfig(), 200, [1.5], trials=200, seed=12)
    sigma = math.hypot(r.on_avg_std_error, 1.25 * r.uniform_std_error)
    assert r.on_avg_alpha_sq_deterministic <= 1.25 * r.uniform_alpha_sq_permuted + 3 * sigma


# ---------------------------------------------------------------- 13


def _event_rate(dist, gamma, eps, trials, seed, released):
    noise = NoiseSource.seeded(seed)
    hits = sum(a_stab(1, dist, gamma, eps, noise).released == released for _ in range(trials))
    return hits / trials


@pytest.mark.acceptance(13, "privacy smoke audit: log-ratio of the bottom event <= eps + 0.05")
@pytest.mark.parametrize("gamma", [stab_threshold(1.0, 1e-5), 0.0])
def test_privacy_smoke_bottom(gamma):
    eps, trials = 1.0, 100_000
    p0 = _event_rate(0, gamma, eps, trials, 130, released=False)
    p1 = _event_rate(1, gamma, eps, trials, 131, released=False)
    assert abs(math.log(p0 / p1)) <= eps + 0.05


@pytest.mark.acceptance(13, "privacy smoke audit: log-ratio of the bottom event <= eps + 0.05")
def test_privacy_smoke_release():
    eps, trials = 1.0, 100_000
    p0 = _event_rate(0, 1.0, eps, trials, 132, released=True)
    p1 = _event_rate(1, 1.0, eps, trials, 133, released=True)
    assert abs(math.log(p1 / p0)) <= eps + 0.05


# ---------------------------------------------------------------- 14

PIPELINE_ARGS = {
    "binary-queries": ["--generator", "threshold", "-n", "4000", "--num-queries", "60", "--alpha", "0.05",
                       "--test-mode", "--override-k", "20"],
    "label-transfer": ["--generator", "threshold", "-n", "4000", "--num-queries", "60", "--alpha", "0.05",
                       "--test-mode", "--override-k", "20"],
    "soft-label": ["--generator", "margin-conditional", "--learner", "label-mean", "-n", "2000",
                   "--num-queries", "30", "--epsilon", "20", "--delta", "0.1", "--beta", "0.1",
                   "--trials", "200", "--nu", "0.01", "--pilot-models", "50", "--test-mode", "--override-k", "20"],
    "stability-probe": ["--generator", "margin", "--learner", "label-mean", "-n", "50", "--trials", "200"],
}


@pytest.mark.acceptance(14, "determinism: same seed gives byte-identical JSON")
@pytest.mark.parametrize("pipeline", sorted(PIPELINE_ARGS))
def test_determinism(pipeline, tmp_path, capsys):
    outs = []
    for r in range(2):
        path = tmp_path / f"run{r}.json"
        argv = [pipeline, *PIPELINE_ARGS[pipeline], "--seed", "14", "--threads", "1", "--out", str(path)]
        assert main(argv) == 0
        text = path.read_text()
        outs.append("\n".join(line for line in text.splitlines() if '"wall_time"' not in line))
    assert outs[0] == outs[1]
    assert '"schema": 1' in outs[0]
