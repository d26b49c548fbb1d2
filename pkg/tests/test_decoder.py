import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import statgeo.decoder as D
from statgeo.decoder import DecoderMap, Head, LayerSpec, UncertaintyReg
from statgeo.errors import InvalidK, NoRegularization, ShapeError
from statgeo.families import FamilyKind, get_family
from statgeo.rng import RngStream
from statgeo.special import softplus
from statgeo.toy import toy_decoder


def normal_identity_softplus():
    """mu = z, sigma-block = softplus(z) per coordinate (d = D = 2... no, D=2 features d=2)."""
    fam = get_family("normal")
    eye = np.eye(2)
    heads = (
        Head("mean", (LayerSpec(eye, np.zeros(2), "identity"),)),
        Head("var", (LayerSpec(eye, np.zeros(2), "softplus"),)),
    )
    return DecoderMap(latent_dim=2, feature_count=2, family=fam, heads=heads)


def fd_jacobian(dec, z, h=1e-5):
    out = np.zeros((dec.param_dim, z.size))
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        out[:, i] = (D.forward_stacked(dec, z + e) - D.forward_stacked(dec, z - e)) / (2 * h)
    return out


class TestForward:
    def test_identity_softplus_heads(self):
        dec = normal_identity_softplus()
        z = np.array([0.3, -0.7])
        points = D.forward(dec, z)
        assert len(points) == 2
        for i, pt in enumerate(points):
            assert pt.values[0] == pytest.approx(z[i])
            assert pt.values[1] == pytest.approx(softplus(z[i]))

    def test_sigmoid_zero_head(self):
        fam = get_family("bernoulli")
        head = Head("prob", (LayerSpec(np.zeros((4, 2)), np.zeros(4), "sigmoid"),))
        dec = DecoderMap(2, 4, fam, (head,))
        for pt in D.forward(dec, np.array([1.3, -2.0])):
            assert pt.values[0] == pytest.approx(0.5)

    def test_beta_heads_strictly_positive(self, gen):
        dec = toy_decoder("beta", seed=1)
        for _ in range(50):
            z = gen.normal(size=2) * 3
            assert np.all(D.forward_stacked(dec, z) > 0)

    def test_shape_error(self):
        dec = normal_identity_softplus()
        with pytest.raises(ShapeError):
            D.forward(dec, np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ShapeError):
            D.forward(dec, np.array([np.nan, 0.0]))


class TestJacobian:
    def test_linear_decoder_constant_jacobian(self, gen):
        w = gen.normal(size=(3, 2))
        fam = get_family("exponential")
        # keep rates positive via a positive offset
        dec = DecoderMap(
            2, 3, fam, (Head("rate", (LayerSpec(w, 5.0 * np.ones(3), "identity"),)),)
        )
        for _ in range(5):
            assert np.allclose(D.jacobian(dec, gen.normal(size=2) * 0.1), w)

    def test_tanh_at_origin(self):
        fam = get_family("normal")
        eye = np.eye(2)
        heads = (
            Head("mean", (LayerSpec(eye, np.zeros(2), "tanh"),)),
            Head("var", (LayerSpec(eye, np.ones(2), "softplus"),)),
        )
        dec = DecoderMap(2, 2, fam, heads)
        jac = D.jacobian(dec, np.zeros(2))
        # mean rows (features interleave mean/var): rows 0 and 2
        assert jac[0, 0] == pytest.approx(1.0) and jac[2, 1] == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", [k.value for k in FamilyKind])
    def test_matches_finite_differences(self, kind, gen):
        for regularized in (False, True):
            dec = toy_decoder(kind, seed=7, regularized=regularized)
            for _ in range(3):
                z = gen.normal(size=2) * 1.5
                jac = D.jacobian(dec, z)
                fd = fd_jacobian(dec, z)
                assert np.max(np.abs(jac - fd) / (1.0 + np.abs(jac))) < 1e-5

    def test_twenty_random_decoders_property(self, gen):
        kinds = [k.value for k in FamilyKind]
        for i in range(20):
            dec = toy_decoder(kinds[i % len(kinds)], seed=100 + i, regularized=i % 2 == 0)
            z = gen.normal(size=2)
            jac, fd = D.jacobian(dec, z), fd_jacobian(dec, z)
            assert np.max(np.abs(jac - fd) / (1.0 + np.abs(jac))) < 1e-5


class TestKMeans:
    def test_single_cluster_is_mean(self, gen):
        pts = gen.normal(size=(40, 2))
        centers = D.kmeans_fit(pts, 1, RngStream(3))
        assert np.allclose(centers[0], pts.mean(axis=0))

    def test_two_separated_clusters(self, gen):
        pts = np.concatenate(
            [gen.normal(size=(30, 2)) * 0.01, gen.normal(size=(30, 2)) * 0.01 + 10.0]
        )
        centers = D.kmeans_fit(pts, 2, RngStream(4))
        centers = centers[np.argsort(centers[:, 0])]
        assert np.linalg.norm(centers[0] - [0, 0]) < 0.05
        assert np.linalg.norm(centers[1] - [10, 10]) < 0.05

    def test_k_equals_n_zero_inertia(self, gen):
        pts = gen.normal(size=(6, 2))
        centers = D.kmeans_fit(pts, 6, RngStream(5))
        assert D.kmeans_inertia(pts, centers) == pytest.approx(0.0, abs=1e-18)

    def test_invalid_k(self, gen):
        pts = np.zeros((5, 2))
        with pytest.raises(InvalidK):
            D.kmeans_fit(pts, 2, RngStream(0))

    def test_inertia_nonincreasing_over_iterations(self, gen):
        pts = gen.normal(size=(80, 2))
        inertias = []
        for iters in (1, 2, 4, 8, 16):
            centers = D.kmeans_fit(pts, 5, RngStream(9), iters=iters)
            inertias.append(D.kmeans_inertia(pts, centers))
        assert all(a >= b - 1e-9 for a, b in zip(inertias, inertias[1:]))


class TestUncertainty:
    def reg(self, centers=((0.0, 0.0),), beta=0.0, c=7.0):
        return UncertaintyReg(np.asarray(centers, float), beta, c)

    def test_distance_at_center_zero(self):
        assert D.support_distance(self.reg(), np.zeros(2)) == 0.0

    def test_distance_three_four_five(self):
        assert D.support_distance(self.reg(), np.array([3.0, 4.0])) == pytest.approx(25.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_distance_is_min_over_centers(self, seed):
        gen = np.random.default_rng(seed)
        centers = gen.normal(size=(50, 2))
        reg = self.reg(centers)
        z = gen.normal(size=2) * 3
        got = D.support_distance(reg, z)
        each = np.sum((centers - z) ** 2, axis=1)
        assert got == pytest.approx(each.min(), rel=1e-12)
        assert np.all(got <= each + 1e-12)

    def test_translated_sigmoid_midpoint(self):
        reg = self.reg(beta=0.3, c=7.0)
        d_mid = 7.0 * softplus(0.3)
        assert D.translated_sigmoid(reg, d_mid) == pytest.approx(0.5)

    def test_translated_sigmoid_at_zero(self):
        reg = self.reg(beta=0.0, c=7.0)
        assert D.translated_sigmoid(reg, 0.0) == pytest.approx(9.1105e-4, rel=1e-3)

    @given(st.floats(0, 100), st.floats(0, 100))
    @settings(max_examples=50, deadline=None)
    def test_translated_sigmoid_monotone(self, d1, d2):
        reg = self.reg(beta=-2.0)
        lo, hi = sorted([d1, d2])
        assert D.translated_sigmoid(reg, lo) <= D.translated_sigmoid(reg, hi)

    def test_reweight_near_center_is_raw(self):
        # sigma_tilde(0) = sigmoid(-c), so the slider only vanishes for large c
        dec = toy_decoder("beta", seed=2)
        dec.regularization.c = 40.0
        z = dec.regularization.centers[0]
        raw = D.raw_forward_stacked(dec, z)
        assert np.allclose(D.forward_stacked(dec, z), raw, atol=1e-6)

    def test_reweight_far_is_extrapolation(self):
        dec = toy_decoder("beta", seed=2)
        far = np.array([50.0, -80.0])
        assert np.allclose(D.forward_stacked(dec, far), dec._extrap, atol=1e-9)

    def test_bernoulli_far_is_half(self):
        dec = toy_decoder("bernoulli", seed=2)
        far = np.array([40.0, 40.0])
        assert np.allclose(D.forward_stacked(dec, far), 0.5, atol=1e-3)

    def test_vmf_blends_concentration_only(self):
        dec = toy_decoder("vmf_s2", seed=2)
        far = np.array([30.0, -30.0])
        out = D.forward_stacked(dec, far)
        raw = D.raw_forward_stacked(dec, far)
        assert np.allclose(out[:3], raw[:3], atol=1e-12)  # mean direction kept
        assert out[3] == pytest.approx(1e-3, rel=1e-3)  # kappa extrapolated

    def test_reweight_requires_regularization(self):
        dec = toy_decoder("beta", seed=2, regularized=False)
        with pytest.raises(NoRegularization):
            D.reweight(dec, np.zeros(2))

    def test_reweight_continuity(self, gen):
        # |reweight(z+delta) - reweight(z)| -> 0 linearly as delta -> 0,
        # even inside the transition band where the slider moves fastest
        dec = toy_decoder("normal", seed=3)
        z = gen.normal(size=2)
        base = D.forward_stacked(dec, z)
        direction = gen.normal(size=2)
        diffs = []
        for scale in (1e-4, 1e-6, 1e-8):
            moved = D.forward_stacked(dec, z + scale * direction)
            diffs.append(np.max(np.abs(moved - base)))
        assert diffs[0] > diffs[1] > diffs[2]
        # ratio ~ delta ratio: linear convergence, no jump discontinuity
        assert diffs[2] / max(diffs[0], 1e-300) < 1e-3


class TestActivationConstraints:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_constraints_hold_for_random_inputs(self, seed):
        gen = np.random.default_rng(seed)
        x = gen.normal(size=(33, 2)) * 5
        softplus_dec = toy_decoder("exponential", seed=4, regularized=False)
        assert np.all(D.forward_stacked(softplus_dec, x) > 0)
        softmax_dec = toy_decoder("categorical", seed=4, regularized=False)
        probs = D.forward_stacked(softmax_dec, x)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        vmf_dec = toy_decoder("vmf_s2", seed=4, regularized=False)
        out = D.forward_stacked(vmf_dec, x)
        assert np.allclose(np.linalg.norm(out[:, :3], axis=1), 1.0, atol=1e-12)


class TestProductFisher:
    def test_two_fair_bernoullis(self):
        from statgeo.families import ParamPoint

        fam = get_family("bernoulli")
        pts = [ParamPoint(fam, np.array([0.5])), ParamPoint(fam, np.array([0.5]))]
        assert np.allclose(D.product_fisher(pts), np.diag([4.0, 4.0]))

    def test_single_feature_equals_fisher(self, gen):
        from statgeo import families as F
        from conftest import random_interior

        eta = random_interior(FamilyKind.GAMMA, gen)
        assert np.allclose(D.product_fisher([eta]), F.fisher_rao(eta))

    def test_off_blocks_exactly_zero(self, gen):
        from conftest import random_interior

        pts = [random_interior(FamilyKind.BETA, gen) for _ in range(3)]
        full = D.product_fisher(pts)
        for i in range(3):
            for j in range(3):
                if i != j:
                    assert np.all(full[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] == 0.0)
