import numpy as np
import pytest

import statgeo.land as L
import statgeo.metric as M
from statgeo.errors import DegenerateEstimate, InvalidParam
from statgeo.geodesic import EnergyConfig
from statgeo.metric import ConstantMetric, GridMetric, PullbackMetric, grid_build
from statgeo.rng import RngStream
from statgeo.toy import toy_circle_codes, toy_decoder

IDENTITY = ConstantMetric(np.eye(2))


def make_model(precision=None, metric=IDENTITY, mean=(0.0, 0.0)):
    precision = np.eye(2) if precision is None else np.asarray(precision)
    c, _, _ = L.land_normalizer_stats(np.asarray(mean, float), precision, metric, RngStream(0), 512)
    return L.LandModel(np.asarray(mean, float), precision, c, metric)


class TestLogPdf:
    def test_at_mean_equals_log_norm_const(self):
        model = make_model()
        assert L.land_logpdf(model, model.mean) == pytest.approx(np.log(model.norm_const))

    def test_matches_gaussian_on_identity_metric(self, gen):
        gamma = np.array([[1.5, 0.3], [0.3, 0.9]])
        model = make_model(gamma)
        for _ in range(5):
            z = gen.normal(size=2)
            expect = (
                -np.log(2 * np.pi)
                + 0.5 * np.log(np.linalg.det(gamma))
                - 0.5 * z @ gamma @ z
            )
            assert L.land_logpdf(model, z) == pytest.approx(expect, abs=1e-3)

    def test_symmetric_under_reflection(self):
        # metric symmetric under z -> -z, so density of v and -v agree
        metric = M.CallableMetric(lambda z: np.diag([1 + z[0] ** 2, 1 + z[1] ** 2]), 2)
        c, _, _ = L.land_normalizer_stats(np.zeros(2), np.eye(2), metric, RngStream(1), 256)
        model = L.LandModel(np.zeros(2), np.eye(2), c, metric)
        z = np.array([0.5, 0.3])
        lp, lm = L.land_logpdf(model, z), L.land_logpdf(model, -z)
        assert abs(lp - lm) / abs(lp) < 0.02


class TestNormalizer:
    def test_gaussian_closed_form_identity_metric(self):
        gamma = np.array([[1.3, 0.2], [0.2, 0.8]])
        c, se, ess = L.land_normalizer_stats(np.zeros(2), gamma, IDENTITY, RngStream(0), 4000)
        expect = (2 * np.pi) ** -1 * np.sqrt(np.linalg.det(gamma))
        assert abs(c - expect) <= 3 * se + 1e-12
        assert ess == pytest.approx(4000)

    def test_gamma_scaling(self):
        gamma = np.array([[1.3, 0.2], [0.2, 0.8]])
        c1 = L.land_normalizer(np.zeros(2), gamma, IDENTITY, RngStream(0), 1000)
        c4 = L.land_normalizer(np.zeros(2), 4 * gamma, IDENTITY, RngStream(0), 1000)
        assert c4 / c1 == pytest.approx(4.0, rel=1e-9)

    def test_stderr_scales_with_sqrt_n(self):
        metric = M.CallableMetric(lambda z: np.diag([1 + z[0] ** 2, 1 + z[1] ** 2]), 2)
        ses = []
        for n in (400, 1600):
            reps = [
                L.land_normalizer_stats(np.zeros(2), np.eye(2), metric, RngStream(s), n)[0]
                for s in range(24)
            ]
            ses.append(np.std(reps))
        assert ses[0] / ses[1] == pytest.approx(2.0, rel=0.5)

    def test_determinism(self):
        metric = M.CallableMetric(lambda z: np.diag([1 + z[0] ** 2, 1 + z[1] ** 2]), 2)
        a = L.land_normalizer(np.zeros(2), np.eye(2), metric, RngStream(5), 300)
        b = L.land_normalizer(np.zeros(2), np.eye(2), metric, RngStream(5), 300)
        assert a == b

    def test_invalid_precision(self):
        with pytest.raises(InvalidParam):
            L.land_normalizer(np.zeros(2), np.diag([1.0, -1.0]), IDENTITY, RngStream(0), 100)


class TestFit:
    def test_euclidean_mle_on_identity_metric(self):
        gen = np.random.default_rng(314)
        pts = gen.normal(size=(500, 2)) + np.array([0.7, -0.3])
        model = L.land_fit(pts, IDENTITY, rng=RngStream(7))
        assert np.linalg.norm(model.mean - pts.mean(axis=0)) < 0.1
        mle = np.linalg.inv(np.cov(pts.T) * (len(pts) - 1) / len(pts))
        assert np.linalg.norm(model.precision - mle) / np.linalg.norm(mle) < 0.15

    def test_single_repeated_point(self):
        pts = np.tile(np.array([0.4, -0.2]), (12, 1))
        cfg = L.LandFitConfig(max_iters=5, mc_samples=64)
        model = L.land_fit(pts, IDENTITY, cfg=cfg, rng=RngStream(3))
        assert np.linalg.norm(model.mean - pts[0]) < 1e-6

    def test_needs_enough_points(self):
        with pytest.raises(InvalidParam):
            L.land_fit(np.zeros((2, 2)), IDENTITY, rng=RngStream(0))

    def test_nll_trace_monotone(self):
        gen = np.random.default_rng(11)
        pts = gen.normal(size=(60, 2))
        cfg = L.LandFitConfig(max_iters=10, mc_samples=128)
        model = L.land_fit(pts, IDENTITY, cfg=cfg, rng=RngStream(2))
        trace = model.nll_trace
        assert all(a >= b - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_grid_metric_beats_euclidean_gaussian_nll(self):
        # paired comparison on the same data and the same normalizer scheme:
        # the fitted model must strictly improve on its Euclidean-Gaussian
        # initialization (sample mean, inverse sample covariance)
        codes = toy_circle_codes(80, 0.1, RngStream(21))
        dec = toy_decoder("beta", seed=5, regularized=False)
        grid = grid_build(PullbackMetric(dec), [[-1.6, 1.6], [-1.6, 1.6]], (12, 12), 0.35)
        metric = GridMetric(grid)
        cfg = L.LandFitConfig(
            max_iters=6, mc_samples=128, exp_steps=15,
            logmap_cfg=EnergyConfig(segments=1, n_disc=12, max_iters=40, grad_tol=1e-5, jitter=0.0),
        )
        model = L.land_fit(codes, metric, cfg=cfg, rng=RngStream(4))
        trace = model.nll_trace
        assert len(trace) >= 2 and trace[-1] < trace[0]


def test_degenerate_estimate_raises():
    # a metric whose determinant collapses away from the mean gives
    # negligible weights for almost all proposal draws
    def fn(z):
        s = 1e-12 if np.linalg.norm(z) > 1e-3 else 1.0
        return np.diag([s, s])

    metric = M.CallableMetric(fn, 2)
    with pytest.raises(DegenerateEstimate):
        L.land_normalizer(np.zeros(2), np.eye(2), metric, RngStream(0), 200)
