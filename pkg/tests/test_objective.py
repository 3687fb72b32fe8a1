import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jecl.errors import ConfigurationError
from jecl.kmeans import CentroidSet
from jecl.numerics import numerical_gradient, relative_error
from jecl.objective import (
    LOG2,
    LossConfig,
    align_loss,
    balance_reg,
    cluster_loss,
    loss_gradients,
    soft_assign,
    target_distribution,
    total_loss,
)

# ---------------------------------------------------------------------------
# straightforward elementwise oracles


def oracle_soft_assign(z, mu, alpha=1.0):
    n, k = z.shape[0], mu.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        kern = [(1.0 + sum((z[i, e] - mu[j, e]) ** 2 for e in range(z.shape[1])) / alpha) ** (-(alpha + 1) / 2) for j in range(k)]
        s = sum(kern)
        for j in range(k):
            out[i, j] = kern[j] / s
    return out


def oracle_target(q, r, lam, present):
    n, k = q.shape
    f = [sum(q[i, j] for i in range(n)) for j in range(k)]
    g = [sum(r[i, j] for i in range(n) if present[i]) for j in range(k)]
    p = np.zeros((n, k))
    for i in range(n):
        a = [q[i, j] ** 2 / f[j] for j in range(k)]
        for j in range(k):
            p[i, j] = lam * a[j] / sum(a)
        if present[i]:
            b = [r[i, j] ** 2 / g[j] for j in range(k)]
            for j in range(k):
                p[i, j] += (1 - lam) * b[j] / sum(b)
    return p


def oracle_gkl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0) - sum(p) + sum(q)


def oracle_cluster(p, q, r, present):
    n = p.shape[0]
    total = 0.0
    for i in range(n):
        total += oracle_gkl(p[i], q[i])
        if present[i]:
            total += oracle_gkl(p[i], r[i])
    return total / n


def oracle_jsd(a, b):
    m = [(x + y) / 2 for x, y in zip(a, b)]
    kl = lambda u: sum(x * math.log(x / y) for x, y in zip(u, m) if x > 0)  # noqa: E731
    return 0.5 * kl(a) + 0.5 * kl(b)


def oracle_reg(q):
    k = q.shape[1]
    m = q.mean(axis=0)
    return sum(x * math.log(x * k) for x in m if x > 0)


def random_state(rng, n, k, missing=0.0):
    q = rng.dirichlet(np.ones(k), size=n)
    r = rng.dirichlet(np.ones(k), size=n)
    present = rng.random(n) >= missing
    return q, r, present


# ---------------------------------------------------------------------------
# soft assignment


def test_equidistant_point_splits_evenly():
    q = soft_assign(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(q, [[0.5, 0.5]], atol=1e-15)


def test_closed_form_two_thirds():
    q = soft_assign(np.array([[0.0]]), CentroidSet(np.array([[0.0], [1.0]])), alpha=1.0)
    np.testing.assert_allclose(q, [[2 / 3, 1 / 3]], rtol=1e-14)


@pytest.mark.parametrize("alpha", [1.0, 0.5, 3.0])
def test_soft_assign_matches_elementwise_oracle(alpha):
    rng = np.random.default_rng(4)
    z, mu = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(soft_assign(z, mu, alpha), oracle_soft_assign(z, mu, alpha), rtol=1e-12)


def test_soft_assign_far_points_stay_positive():
    q = soft_assign(np.array([[1e6, -1e6]]), np.array([[0.0, 0.0], [1.0, 1.0], [-3.0, 2.0]]))
    assert np.all(q > 0) and np.all(q <= 1)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)


def test_soft_assign_shape_mismatch():
    with pytest.raises(ConfigurationError):
        soft_assign(np.zeros((2, 3)), np.zeros((2, 4)))


# ---------------------------------------------------------------------------
# target distribution


def test_identical_views_give_lambda_free_target():
    rng = np.random.default_rng(0)
    q = rng.dirichlet(np.ones(4), size=7)
    single = target_distribution(q, None, 1.0)
    for lam in (0.0, 0.3, 0.5, 1.0):
        np.testing.assert_allclose(target_distribution(q, q.copy(), lam), single, rtol=1e-13)


def test_lambda_one_hand_evaluated_target():
    q = np.array([[0.8, 0.2], [0.2, 0.8]])
    p = target_distribution(q, np.full((2, 2), 0.5), 1.0)
    np.testing.assert_allclose(p, [[16 / 17, 1 / 17], [1 / 17, 16 / 17]], rtol=1e-14)


def test_single_cluster_target_is_all_ones():
    q = np.ones((5, 1))
    np.testing.assert_array_equal(target_distribution(q, q, 0.5), np.ones((5, 1)))


def test_target_matches_oracle_with_missing_text():
    rng = np.random.default_rng(1)
    q, r, present = random_state(rng, 9, 4, missing=0.4)
    p = target_distribution(q, r, 0.3, present)
    np.testing.assert_allclose(p, oracle_target(q, r, 0.3, present), rtol=1e-12)
    np.testing.assert_allclose(p[present].sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(p[~present].sum(1), 0.3, atol=1e-12)


def test_lambda_one_ignores_text():
    rng = np.random.default_rng(2)
    q, r, _ = random_state(rng, 6, 3)
    p1 = target_distribution(q, r, 1.0)
    p2 = target_distribution(q, rng.dirichlet(np.ones(3), size=6), 1.0)
    np.testing.assert_array_equal(p1, p2)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), k=st.integers(2, 6))
def test_sharpened_argmax_is_argmax_of_frequency_scaled_square(seed, n, k):
    q = np.random.default_rng(seed).dirichlet(np.ones(k), size=n)
    p = target_distribution(q, None, 1.0)
    np.testing.assert_array_equal(p.argmax(1), (q * q / q.sum(0)).argmax(1))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), k=st.integers(2, 6))
def test_sharpening_keeps_unique_maximum_when_clusters_are_balanced(seed, n, k):
    base = np.random.default_rng(seed).dirichlet(np.ones(k), size=n)
    # every cyclic shift of every row: all column sums are equal
    q = np.concatenate([np.roll(base, s, axis=1) for s in range(k)])
    top = np.sort(q, 1)
    unique = top[:, -1] > top[:, -2] * (1 + 1e-9)
    p = target_distribution(q, None, 1.0)
    np.testing.assert_array_equal(p.argmax(1)[unique], q.argmax(1)[unique])


def test_unbalanced_frequencies_can_move_the_argmax():
    q = np.array([[0.55, 0.45]] + [[0.9, 0.1]] * 5)
    assert target_distribution(q, None, 1.0)[0].argmax() == 1


# ---------------------------------------------------------------------------
# losses


def test_cluster_loss_zero_when_all_equal():
    q = np.random.default_rng(3).dirichlet(np.ones(3), size=4)
    assert cluster_loss(q, q, q) == pytest.approx(0.0, abs=1e-15)


def test_cluster_loss_closed_form():
    p, h = np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])
    assert cluster_loss(p, h, h) == pytest.approx(2 * math.log(2), abs=1e-14)


def test_cluster_loss_matches_double_sum_oracle():
    rng = np.random.default_rng(5)
    q, r, present = random_state(rng, 10, 4, missing=0.3)
    p = target_distribution(q, r, 0.5, present)
    assert cluster_loss(p, q, r, present) == pytest.approx(oracle_cluster(p, q, r, present), rel=1e-12)


def test_align_loss_extremes():
    q = np.random.default_rng(0).dirichlet(np.ones(3), size=5)
    assert align_loss(q, q) == pytest.approx(0.0, abs=1e-15)
    assert align_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(math.log(2), abs=1e-12)


def test_align_loss_matches_oracle_and_is_symmetric():
    rng = np.random.default_rng(6)
    q, r, present = random_state(rng, 8, 5, missing=0.25)
    want = np.mean([oracle_jsd(q[i], r[i]) for i in range(8) if present[i]])
    assert align_loss(q, r, present) == pytest.approx(want, rel=1e-12)
    assert align_loss(r, q, present) == pytest.approx(align_loss(q, r, present), rel=1e-14)


def test_balance_reg_extremes_and_oracle():
    u = np.full((4, 3), 1 / 3)
    assert balance_reg(u, u) == (pytest.approx(0.0, abs=1e-15), pytest.approx(0.0, abs=1e-15))
    one = np.tile([1.0, 0.0], (3, 1))
    ri, rt = balance_reg(one, one)
    assert ri == pytest.approx(math.log(2), abs=1e-12) and rt == pytest.approx(math.log(2), abs=1e-12)
    rng = np.random.default_rng(7)
    q, r, present = random_state(rng, 9, 4, missing=0.3)
    ri, rt = balance_reg(q, r, present)
    assert ri == pytest.approx(oracle_reg(q), rel=1e-12)
    assert rt == pytest.approx(oracle_reg(r[present]), rel=1e-12)


def test_total_loss_reductions_and_recombination():
    rng = np.random.default_rng(8)
    q, r, present = random_state(rng, 10, 3, missing=0.2)
    p = target_distribution(q, r, 0.5, present)
    plain = total_loss(q, r, p, LossConfig(gamma=0.0, beta=0.0), present)
    assert plain.total == cluster_loss(p, q, r, present)
    cfg = LossConfig(lam=0.5, gamma=0.7, beta=0.3)
    b = total_loss(q, r, p, cfg, present)
    ri, rt = balance_reg(q, r, present)
    want = cluster_loss(p, q, r, present) + 0.7 * align_loss(q, r, present) + 0.3 * (ri + rt)
    assert b.total == pytest.approx(want, abs=1e-12)
    u = np.full((4, 3), 1 / 3)
    assert total_loss(u, u, u, LossConfig()).total == pytest.approx(0.0, abs=1e-14)


def test_loss_config_validation():
    for bad in (dict(lam=1.5), dict(lam=-0.1), dict(gamma=-1.0), dict(beta=-1.0), dict(alpha=0.0)):
        with pytest.raises(ConfigurationError):
            LossConfig(**bad)
    assert LossConfig() == LossConfig(lam=0.5, gamma=0.1, beta=0.1, alpha=1.0)


@settings(max_examples=300, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 15),
    k=st.integers(1, 6),
    lam=st.floats(0.0, 1.0),
    missing=st.floats(0.0, 1.0),
    conc=st.sampled_from([0.05, 1.0, 20.0]),
)
def test_distribution_invariants(seed, n, k, lam, missing, conc):
    rng = np.random.default_rng(seed)
    z, zt = rng.normal(size=(n, 3)) * 3, rng.normal(size=(n, 3)) * 3
    q = soft_assign(z, rng.normal(size=(k, 3)))
    r = soft_assign(zt, rng.normal(size=(k, 3)))
    if conc != 1.0:
        q = rng.dirichlet(np.full(k, conc), size=n)
        q = np.maximum(q, 1e-300)
        q /= q.sum(1, keepdims=True)
    present = rng.random(n) >= missing
    np.testing.assert_allclose(q.sum(1), 1.0, atol=1e-9)
    np.testing.assert_allclose(r.sum(1), 1.0, atol=1e-9)
    p = target_distribution(q, r, lam, present)
    np.testing.assert_allclose(p[present].sum(1), 1.0, atol=1e-9)
    np.testing.assert_allclose(p[~present].sum(1), lam, atol=1e-9)
    b = total_loss(q, r, p, LossConfig(lam=lam), present)
    for part in (b.cluster, b.align, b.reg_img, b.reg_txt, b.total):
        assert part >= 0.0
    assert b.align <= LOG2


def test_losses_invariant_to_cluster_relabeling():
    rng = np.random.default_rng(9)
    z, zt = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    mu, mt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    present = np.array([1, 1, 0, 1, 0, 1, 1, 1], dtype=bool)
    perm = np.array([2, 0, 3, 1])
    cfg = LossConfig(gamma=0.4, beta=0.2)
    q, r = soft_assign(z, mu), soft_assign(zt, mt)
    p = target_distribution(q, r, 0.5, present)
    qp, rp = soft_assign(z, mu[perm]), soft_assign(zt, mt[perm])
    np.testing.assert_allclose(qp, q[:, perm], rtol=1e-14)
    pp = target_distribution(qp, rp, 0.5, present)
    np.testing.assert_allclose(pp, p[:, perm], rtol=1e-12)
    a, b = total_loss(q, r, p, cfg, present), total_loss(qp, rp, pp, cfg, present)
    assert a.total == pytest.approx(b.total, rel=1e-12)


# ---------------------------------------------------------------------------
# gradients


def _fd_check(rng, n, k, e, cfg, present):
    z, zt = rng.normal(size=(n, e)), rng.normal(size=(n, e))
    mu, mt = rng.normal(size=(k, e)), rng.normal(size=(k, e))
    q, r = soft_assign(z, mu), soft_assign(zt, mt)
    p = target_distribution(q, r, cfg.lam, present)

    def f(zi=z, zti=zt, mui=mu, mti=mt):
        return total_loss(soft_assign(zi, mui), soft_assign(zti, mti), p, cfg, present).total

    g = loss_gradients(z, zt, mu, mt, p, cfg, present)
    errs = [
        relative_error(g.z_img, numerical_gradient(lambda v: f(zi=v), z.copy())),
        relative_error(g.z_txt, numerical_gradient(lambda v: f(zti=v), zt.copy())),
        relative_error(g.mu_img, numerical_gradient(lambda v: f(mui=v), mu.copy())),
        relative_error(g.mu_txt, numerical_gradient(lambda v: f(mti=v), mt.copy())),
    ]
    assert g.loss.total == pytest.approx(f(), rel=1e-12)
    return max(errs), g


def test_gradients_match_finite_differences_small_instance():
    rng = np.random.default_rng(10)
    err, _ = _fd_check(rng, 6, 3, 4, LossConfig(), np.ones(6, dtype=bool))
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences_with_missing_text(seed):
    rng = np.random.default_rng(100 + seed)
    present = np.array([1, 0, 1, 1, 0, 1, 1], dtype=bool)
    err, g = _fd_check(rng, 7, 3, 2, LossConfig(lam=0.6, gamma=0.5, beta=0.4), present)
    assert err < 1e-4
    assert np.all(g.z_txt[~present] == 0.0)


def test_symmetric_fixpoint_has_zero_centroid_gradients():
    z = np.zeros((5, 2))
    mu = np.zeros((3, 2))
    p = np.full((5, 3), 1 / 3)
    g = loss_gradients(z, z.copy(), mu, mu.copy(), p, LossConfig())
    assert np.all(g.mu_img == 0) and np.all(g.mu_txt == 0)


def test_image_only_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    z, mu = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    cfg = LossConfig(lam=1.0, gamma=0.0, beta=0.2)
    p = target_distribution(soft_assign(z, mu), None, 1.0)
    g = loss_gradients(z, None, mu, None, p, cfg)
    assert g.z_txt is None
    num = numerical_gradient(lambda v: total_loss(soft_assign(v, mu), None, p, cfg).total, z.copy())
    assert relative_error(g.z_img, num) < 1e-4


def test_all_text_missing_gives_zero_text_gradients():
    rng = np.random.default_rng(12)
    z, zt = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    mu, mt = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    present = np.zeros(4, dtype=bool)
    p = target_distribution(soft_assign(z, mu), None, 0.5, present)
    g = loss_gradients(z, zt, mu, mt, p, LossConfig(), present)
    assert np.all(g.z_txt == 0) and np.all(g.mu_txt == 0)


def test_missing_text_rows_get_smaller_image_gradients():
    # a missing-text row has target lam * sharpen(q): its cluster pull is scaled by lam
    rng = np.random.default_rng(13)
    n = 200
    z, zt = rng.normal(size=(n, 4)) * 2, rng.normal(size=(n, 4)) * 2
    mu, mt = rng.normal(size=(5, 4)) * 2, rng.normal(size=(5, 4)) * 2
    present = rng.random(n) >= 0.3
    cfg = LossConfig()
    q, r = soft_assign(z, mu), soft_assign(zt, mt)
    p = target_distribution(q, r, cfg.lam, present)
    g = np.linalg.norm(loss_gradients(z, zt, mu, mt, p, cfg, present).z_img, axis=1)
    assert g[~present].mean() < g[present].mean()
