"""Metric fields on the latent space.

Three sources for the d x d tensor at a latent point:

* exact pullback  M(z) = J(z)^T I_H(h(z)) J(z),
* the KL-probe estimator built purely from divergences along coordinate
  perturbations (no Jacobian access),
* a uniformly spaced grid of precomputed tensors blended with a
  normalized Gaussian kernel.

All variants expose ``eval`` (single point) and ``eval_batch``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoder as dec_mod
from .decoder import DecoderMap
from .errors import InvalidEpsilon, OffSimplex, ShapeError
from .families import FamilyKind, McKl, ParamPoint, get_family


class LatentMetric:
    """Anything that yields a symmetric d x d tensor at a latent point."""

    latent_dim: int

    def eval(self, z) -> np.ndarray:
        raise NotImplementedError

    def eval_batch(self, zs) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        return np.stack([self.eval(z) for z in zs])

    def __call__(self, z) -> np.ndarray:
        return self.eval(z)


class ConstantMetric(LatentMetric):
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError("constant metric needs a square matrix")
        self.latent_dim = self.matrix.shape[0]

    def eval(self, z):
        return self.matrix.copy()

    def eval_batch(self, zs):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        return np.broadcast_to(self.matrix, (zs.shape[0],) + self.matrix.shape).copy()


class CallableMetric(LatentMetric):
    """Wrap an arbitrary z -> (d, d) callable (test metrics, closed forms)."""

    def __init__(self, fn, latent_dim: int):
        self.fn = fn
        self.latent_dim = latent_dim

    def eval(self, z):
        return np.asarray(self.fn(np.asarray(z, dtype=float)), dtype=float)


class PullbackMetric(LatentMetric):
    """Exact Fisher-Rao pullback through a decoder."""

    def __init__(self, decoder: DecoderMap):
        self.decoder = decoder
        self.latent_dim = decoder.latent_dim

    def eval(self, z):
        return pullback(self.decoder, z)

    def eval_batch(self, zs):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        jac = dec_mod.jacobian_stacked(self.decoder, zs)
        stacked = dec_mod.forward_stacked(self.decoder, zs)
        fam = self.decoder.family
        d_feat = self.decoder.feature_count
        blocks = dec_mod.product_fisher_stacked(fam, stacked)  # (m, D, p, p)
        jb = jac.reshape(zs.shape[0], d_feat, fam.param_dim, self.latent_dim)
        m = np.einsum("mfpi,mfpq,mfqj->mij", jb, blocks, jb)
        return 0.5 * (m + np.swapaxes(m, 1, 2))


class KlProbeMetric(LatentMetric):
    """Numerical metric from KL divergences along coordinate probes.

    Negative eigenvalues from noisy probes are clamped to
    1e-8 * trace / d; ``clamp_count`` tallies how often that fired.
    """

    def __init__(self, decoder: DecoderMap, eps: float = 1e-2, mc: McKl | None = None):
        if eps <= 0:
            raise InvalidEpsilon("probe step must be > 0")
        self.decoder = decoder
        self.eps = float(eps)
        self.mc = mc
        self.latent_dim = decoder.latent_dim
        self.clamp_count = 0

    def eval(self, z):
        m, clamped = _kl_probe_impl(self.decoder, np.asarray(z, dtype=float), self.eps, self.mc)
        self.clamp_count += clamped
        return m


@dataclass
class MetricGrid:
    """Uniform lattice of tensors with a Gaussian blending bandwidth."""

    points: np.ndarray  # (S, d)
    tensors: np.ndarray  # (S, d, d)
    bandwidth: float
    bounds: np.ndarray  # (d, 2)
    resolution: tuple[int, ...]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.bandwidth <= 0:
            raise ShapeError("grid bandwidth must be > 0")


class GridMetric(LatentMetric):
    """Kernel-smoothed interpolation of a tensor lattice.

    When every kernel weight underflows (far-field query) the nearest
    grid tensor is returned so ODE integration stays defined;
    ``fallback_count`` tallies those queries.
    """

    def __init__(self, grid: MetricGrid):
        self.grid = grid
        self.latent_dim = grid.points.shape[1]
        self.fallback_count = 0

    def eval(self, z):
        return self.eval_batch(np.asarray(z, dtype=float)[None])[0]

    def eval_batch(self, zs):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        pts = self.grid.points
        # squared distances via the Gram expansion (BLAS-backed)
        d2 = (
            np.sum(zs * zs, axis=1)[:, None]
            + np.sum(pts * pts, axis=1)[None, :]
            - 2.0 * zs @ pts.T
        )
        logw = d2 / (-2.0 * self.grid.bandwidth**2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        total = w.sum(axis=1, keepdims=True)
        dead = ~np.isfinite(total[:, 0]) | (total[:, 0] <= 0)
        if np.any(dead):
            self.fallback_count += int(dead.sum())
            nearest = np.argmin(d2[dead], axis=1)
            w[dead] = 0.0
            w[np.nonzero(dead)[0], nearest] = 1.0
            total[dead] = 1.0
        w = w / total
        d = self.latent_dim
        flat = w @ self.grid.tensors.reshape(-1, d * d)
        return flat.reshape(-1, d, d)


def pullback(dec: DecoderMap, z) -> np.ndarray:
    """J^T I_H(h(z)) J, symmetrized."""
    z = np.asarray(z, dtype=float)
    jac = dec_mod.jacobian(dec, z)
    stacked = dec_mod.forward_stacked(dec, z)
    blocks = dec_mod.product_fisher_stacked(dec.family, stacked)
    jb = jac.reshape(dec.feature_count, dec.family.param_dim, dec.latent_dim)
    m = np.einsum("fpi,fpq,fqj->ij", jb, blocks, jb)
    return 0.5 * (m + m.T)


def _decoded_kl(dec: DecoderMap, z1, z2, mc: McKl | None) -> float:
    """Sum of per-feature divergences between two decoded points."""
    fam = dec.family
    p1 = dec_mod.forward_stacked(dec, z1).reshape(dec.feature_count, fam.param_dim)
    p2 = dec_mod.forward_stacked(dec, z2).reshape(dec.feature_count, fam.param_dim)
    if mc is None:
        return float(np.sum(fam.kl(p1, p2)))
    gen = mc.rng.child(0).generator
    total = 0.0
    for f in range(dec.feature_count):
        x = fam.sample(p1[f], gen, mc.n_samples)
        total += float(np.mean(fam.log_pdf(p1[f], x) - fam.log_pdf(p2[f], x)))
    return total


def _kl_probe_impl(dec: DecoderMap, z, eps: float, mc: McKl | None):
    d = dec.latent_dim
    eye = np.eye(d)
    kl_single = np.array(
        [_decoded_kl(dec, z, z + eps * eye[i], mc) for i in range(d)]
    )
    m = np.zeros((d, d))
    np.fill_diagonal(m, 2.0 * kl_single / eps**2)
    for i in range(d):
        for j in range(i + 1, d):
            pair = _decoded_kl(dec, z, z + eps * (eye[i] + eye[j]), mc)
            m[i, j] = m[j, i] = (pair - kl_single[i] - kl_single[j]) / eps**2
    return clamp_spd(m)


def kl_probe(dec: DecoderMap, z, eps: float = 1e-2, mc: McKl | None = None) -> np.ndarray:
    """Metric estimate from forward KL probes; symmetric by construction."""
    if eps <= 0:
        raise InvalidEpsilon("probe step must be > 0")
    m, _ = _kl_probe_impl(dec, np.asarray(z, dtype=float), eps, mc)
    return m


def clamp_spd(m: np.ndarray, rel_floor: float = 1e-8):
    """Clamp non-positive eigenvalues to rel_floor * trace / d.

    Returns (matrix, n_clamped). No-op for already-PD tensors.
    """
    vals, vecs = np.linalg.eigh(m)
    floor = rel_floor * max(np.trace(m), np.finfo(float).tiny) / m.shape[0]
    bad = vals < floor
    if not np.any(bad):
        return m, 0
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, int(bad.sum())


def simplex_chart(eta_free) -> tuple[ParamPoint, np.ndarray]:
    """Complete free simplex coordinates and return the chart Jacobian.

    eta_free has K-1 positive entries summing below 1; the returned point
    appends the complement and the (K, K-1) Jacobian is [I; -1^T].
    """
    eta_free = np.asarray(eta_free, dtype=float)
    if eta_free.ndim != 1:
        raise ShapeError("simplex chart expects a flat coordinate vector")
    if np.any(eta_free <= 0) or eta_free.sum() >= 1.0:
        raise OffSimplex("free coordinates must be positive with sum < 1")
    k = eta_free.size + 1
    values = np.concatenate([eta_free, [1.0 - eta_free.sum()]])
    jac = np.vstack([np.eye(k - 1), -np.ones((1, k - 1))])
    return ParamPoint(get_family(FamilyKind.CATEGORICAL, k), values), jac


def simplex_chart_decoder(k: int) -> DecoderMap:
    """The simplex parametrization as an affine categorical decoder."""
    weight = np.vstack([np.eye(k - 1), -np.ones((1, k - 1))])
    bias = np.zeros(k)
    bias[-1] = 1.0
    head = dec_mod.Head("probs", (dec_mod.LayerSpec(weight, bias),))
    return DecoderMap(
        latent_dim=k - 1,
        feature_count=1,
        family=get_family(FamilyKind.CATEGORICAL, k),
        heads=(head,),
    )


def grid_build(
    metric: LatentMetric,
    bounds,
    resolution,
    sigma: float,
    threads: int = 1,
) -> MetricGrid:
    """Evaluate a metric on a uniform lattice.

    ``bounds`` is (d, 2) min/max per axis, ``resolution`` the point count
    per axis (>= 2). Lattice points enumerate axis 0 outermost.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    resolution = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(resolution) != bounds.shape[0]:
        raise ShapeError("resolution must give one count per axis")
    if any(r < 2 for r in resolution):
        raise ShapeError("grid resolution must be >= 2 per axis")
    if sigma <= 0:
        raise ShapeError("grid bandwidth must be > 0")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            tensors = np.stack(list(pool.map(metric.eval, points)))
    else:
        tensors = metric.eval_batch(points)
    return MetricGrid(
        points=points,
        tensors=tensors,
        bandwidth=float(sigma),
        bounds=bounds,
        resolution=resolution,
    )


def grid_eval(grid: MetricGrid, z) -> np.ndarray:
    """Normalized Gaussian-kernel combination of the lattice tensors."""
    return GridMetric(grid).eval(z)
