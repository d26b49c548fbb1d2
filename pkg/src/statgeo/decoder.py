"""Deterministic decoder maps from latent space to likelihood parameters.

A decoder is a list of named heads, one per parameter kind (e.g. "mean" and
"var" for Normal), each a stack of affine layers with activations. Head
outputs are interleaved feature-major into the stacked parameter vector
[eta_1; ...; eta_D], the layout every metric computation uses.

Jacobians are exact chain-rule products; softmax and unit-normalize use
their full per-feature-block Jacobians. The optional uncertainty wrapper
blends decoded parameters toward maximum-entropy values via a translated
sigmoid of the squared distance to the nearest KMeans center, and its
gradient term is included in the Jacobian (nearest center held fixed at
the non-differentiable min).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidK, NoRegularization, ShapeError
from .families import Family, ParamPoint
from .rng import RngStream
from .special import sigmoid, softplus

ACTIVATIONS = ("identity", "tanh", "sigmoid", "softplus", "softmax", "unit_normalize")


def _parse_activation(name: str):
    if name in ACTIVATIONS:
        return name, None
    if name.startswith("scale:"):
        return "scale", float(name.split(":", 1)[1])
    raise ShapeError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer followed by an activation.

    ``activation`` is one of identity, tanh, sigmoid, softplus, softmax,
    unit_normalize, or "scale:<c>". Softmax/unit-normalize act per
    consecutive feature block.
    """

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ShapeError(
                f"layer weight {w.shape} and bias {b.shape} are inconsistent"
            )
        _parse_activation(self.activation)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class Head:
    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ShapeError(
                    f"head {self.name!r}: layer out {prev.weight.shape[0]} "
                    f"feeds layer in {nxt.weight.shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]


@dataclass
class UncertaintyReg:
    """KMeans support proxy plus translated-sigmoid reweighting."""

    centers: np.ndarray  # (k, d)
    beta: float
    c: float = 7.0
    extrapolation: np.ndarray | None = None  # (D, p) override

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if self.centers.shape[0] < 1:
            raise InvalidK("uncertainty regularization needs k >= 1 centers")


@dataclass
class DecoderMap:
    """Map z -> stacked likelihood parameters for D i.i.d. features."""

    latent_dim: int
    feature_count: int
    family: Family
    heads: tuple[Head, ...]
    regularization: UncertaintyReg | None = None
    # optional affine change of latent coordinates applied before the heads:
    # forward(z) evaluates the heads at A z + b (see compose_linear)
    pre_transform: tuple[np.ndarray, np.ndarray] | None = None
    _extrap: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.heads = tuple(self.heads)
        schema = self.family.head_schema()
        if len(self.heads) != len(schema):
            raise ShapeError(
                f"{self.family.kind.value} expects heads "
                f"{[s[0] for s in schema]}, got {[h.name for h in self.heads]}"
            )
        for head, (name, width, _) in zip(self.heads, schema):
            if head.in_dim != self.latent_dim:
                raise ShapeError(
                    f"head {head.name!r} consumes {head.in_dim} dims, "
                    f"latent space has {self.latent_dim}"
                )
            if head.out_dim != self.feature_count * width:
                raise ShapeError(
                    f"head {head.name!r} emits {head.out_dim} values, "
                    f"expected {self.feature_count}*{width} for {name!r}"
                )
        if self.pre_transform is not None:
            a, b = self.pre_transform
            self.pre_transform = (np.asarray(a, float), np.asarray(b, float))
        self._extrap = self._build_extrapolation()

    @property
    def param_dim(self) -> int:
        """Total stacked parameter count D * p."""
        return self.feature_count * self.family.param_dim

    def _build_extrapolation(self) -> np.ndarray:
        if self.regularization is not None and self.regularization.extrapolation is not None:
            ex = np.asarray(self.regularization.extrapolation, dtype=float)
            if ex.shape != (self.feature_count, self.family.param_dim):
                raise ShapeError(
                    f"extrapolation override has shape {ex.shape}, expected "
                    f"({self.feature_count}, {self.family.param_dim})"
                )
            return ex.reshape(-1)
        one = self.family.max_uncertainty()
        return np.tile(one, self.feature_count)

    def blend_mask_stacked(self) -> np.ndarray:
        return np.tile(self.family.blend_mask(), self.feature_count)


def _apply_activation(name: str, scale, x: np.ndarray, block: int) -> np.ndarray:
    if name == "identity":
        return x
    if name == "scale":
        return scale * x
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "softplus":
        return softplus(x)
    m = x.shape[0]
    blocks = x.reshape(m, -1, block)
    if name == "softmax":
        shifted = blocks - blocks.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return (e / e.sum(axis=-1, keepdims=True)).reshape(m, -1)
    if name == "unit_normalize":
        norms = np.linalg.norm(blocks, axis=-1, keepdims=True)
        return (blocks / norms).reshape(m, -1)
    raise ShapeError(f"unknown activation {name!r}")


def _activation_jacobian(
    name: str, scale, pre: np.ndarray, post: np.ndarray, jac: np.ndarray, block: int
) -> np.ndarray:
    """Push a running Jacobian (m, out, d) through the activation."""
    if name == "identity":
        return jac
    if name == "scale":
        return scale * jac
    if name == "tanh":
        return (1.0 - post**2)[..., None] * jac
    if name == "sigmoid":
        return (post * (1.0 - post))[..., None] * jac
    if name == "softplus":
        return sigmoid(pre)[..., None] * jac
    m, out, d = jac.shape
    jb = jac.reshape(m, -1, block, d)
    if name == "softmax":
        s = post.reshape(m, -1, block)
        sj = np.einsum("mfb,mfbd->mfd", s, jb)
        out_j = s[..., None] * (jb - sj[:, :, None, :])
        return out_j.reshape(m, out, d)
    if name == "unit_normalize":
        xb = pre.reshape(m, -1, block)
        norms = np.linalg.norm(xb, axis=-1, keepdims=True)
        y = post.reshape(m, -1, block)
        yj = np.einsum("mfb,mfbd->mfd", y, jb)
        out_j = (jb - y[..., None] * yj[:, :, None, :]) / norms[..., None]
        return out_j.reshape(m, out, d)
    raise ShapeError(f"unknown activation {name!r}")


def _as_batch(z, latent_dim):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if zb.shape[1] != latent_dim:
        raise ShapeError(f"latent point has dim {zb.shape[1]}, decoder expects {latent_dim}")
    return zb, single


def _head_forward(head: Head, z: np.ndarray, block: int) -> np.ndarray:
    x = z
    for layer in head.layers:
        name, scale = _parse_activation(layer.activation)
        x = _apply_activation(name, scale, x @ layer.weight.T + layer.bias, block)
    return x


def _head_forward_jac(head: Head, z: np.ndarray, block: int):
    m, d = z.shape
    x = z
    jac = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    for layer in head.layers:
        name, scale = _parse_activation(layer.activation)
        pre = x @ layer.weight.T + layer.bias
        jac = np.einsum("oi,mid->mod", layer.weight, jac)
        post = _apply_activation(name, scale, pre, block)
        jac = _activation_jacobian(name, scale, pre, post, jac, block)
        x = post
    return x, jac


def _interleave(dec: DecoderMap, per_head: list[np.ndarray]) -> np.ndarray:
    """Reorder head-major outputs (m, D*q_j) into feature-major (m, D*p)."""
    m = per_head[0].shape[0]
    parts = [
        h.reshape(m, dec.feature_count, -1) for h in per_head
    ]
    return np.concatenate(parts, axis=2).reshape(m, dec.param_dim)


def _pre(dec: DecoderMap, zb: np.ndarray) -> np.ndarray:
    if dec.pre_transform is None:
        return zb
    a, b = dec.pre_transform
    return zb @ a.T + b


def _heads_forward(dec: DecoderMap, u: np.ndarray) -> np.ndarray:
    schema = dec.family.head_schema()
    outs = [
        _head_forward(head, u, width)
        for head, (_, width, _) in zip(dec.heads, schema)
    ]
    return _interleave(dec, outs)


def raw_forward_stacked(dec: DecoderMap, z) -> np.ndarray:
    """Head outputs without uncertainty reweighting, feature-major."""
    zb, single = _as_batch(z, dec.latent_dim)
    if not np.all(np.isfinite(zb)):
        raise ShapeError("latent point must be finite")
    out = _heads_forward(dec, _pre(dec, zb))
    return out[0] if single else out


def forward_stacked(dec: DecoderMap, z) -> np.ndarray:
    """Decoded stacked parameters, reweighted when regularization is present."""
    zb, single = _as_batch(z, dec.latent_dim)
    if not np.all(np.isfinite(zb)):
        raise ShapeError("latent point must be finite")
    u = _pre(dec, zb)
    h = _heads_forward(dec, u)
    if dec.regularization is not None:
        s = translated_sigmoid(dec.regularization, support_distance(dec.regularization, u))
        mask = dec.blend_mask_stacked().astype(float)
        h = h + s[:, None] * mask * (dec._extrap - h)
    return h[0] if single else h


def forward(dec: DecoderMap, z) -> list[ParamPoint]:
    """Decode one latent point into D per-feature parameter points."""
    stacked = forward_stacked(dec, np.asarray(z, dtype=float))
    per_feature = stacked.reshape(dec.feature_count, dec.family.param_dim)
    return [ParamPoint(dec.family, row) for row in per_feature]


def jacobian_stacked(dec: DecoderMap, z) -> np.ndarray:
    """Exact Jacobian of forward_stacked, shape (m, D*p, d) or (D*p, d)."""
    zb, single = _as_batch(z, dec.latent_dim)
    u = _pre(dec, zb)
    schema = dec.family.head_schema()
    outs, jacs = [], []
    for head, (_, width, _) in zip(dec.heads, schema):
        o, j = _head_forward_jac(head, u, width)
        outs.append(o)
        jacs.append(j)
    h = _interleave(dec, outs)
    m = zb.shape[0]
    jparts = [
        j.reshape(m, dec.feature_count, -1, dec.latent_dim) for j in jacs
    ]
    jac = np.concatenate(jparts, axis=2).reshape(m, dec.param_dim, dec.latent_dim)
    if dec.regularization is not None:
        reg = dec.regularization
        dist, nearest = _support_distance_argmin(reg, u)
        s = translated_sigmoid(reg, dist)
        sp = s * (1.0 - s) / softplus(reg.beta)
        grad_dist = 2.0 * (u - reg.centers[nearest])  # (m, d) wrt u
        grad_s = sp[:, None] * grad_dist
        mask = dec.blend_mask_stacked().astype(float)
        jac = (1.0 - s[:, None] * mask)[..., None] * jac + (
            mask * (dec._extrap - h)
        )[..., None] * grad_s[:, None, :]
    if dec.pre_transform is not None:
        jac = jac @ dec.pre_transform[0]
    return jac[0] if single else jac


def jacobian(dec: DecoderMap, z) -> np.ndarray:
    """Jacobian at a single latent point, shape (D*p, d)."""
    return jacobian_stacked(dec, np.asarray(z, dtype=float))


def product_fisher(points: list[ParamPoint]) -> np.ndarray:
    """Block-diagonal information tensor of a product likelihood."""
    from .families import _same_family, fisher_rao

    fam = points[0].family
    for p in points[1:]:
        _same_family(points[0], p)
    p = fam.param_dim
    total = p * len(points)
    out = np.zeros((total, total))
    for i, pt in enumerate(points):
        out[i * p : (i + 1) * p, i * p : (i + 1) * p] = fisher_rao(pt)
    return out


def product_fisher_stacked(family: Family, stacked: np.ndarray) -> np.ndarray:
    """Per-feature tensors from a stacked vector, shape (..., D, p, p)."""
    per_feature = stacked.reshape(stacked.shape[:-1] + (-1, family.param_dim))
    return family.fisher(per_feature)


# ---------------------------------------------------------------------------
# uncertainty regularization


def _support_distance_argmin(reg: UncertaintyReg, zb: np.ndarray):
    d2 = np.sum((zb[:, None, :] - reg.centers[None, :, :]) ** 2, axis=-1)
    nearest = np.argmin(d2, axis=1)
    return d2[np.arange(zb.shape[0]), nearest], nearest


def support_distance(reg: UncertaintyReg, z):
    """Squared Euclidean distance to the nearest center."""
    zb, single = _as_batch(z, reg.centers.shape[1])
    dist, _ = _support_distance_argmin(reg, zb)
    return float(dist[0]) if single else dist


def translated_sigmoid(reg: UncertaintyReg, d):
    """sigma_tilde(d) = Sigmoid((d - c * Softplus(beta)) / Softplus(beta))."""
    sp = softplus(reg.beta)
    return sigmoid((np.asarray(d, dtype=float) - reg.c * sp) / sp)


def reweight(dec: DecoderMap, z) -> list[ParamPoint]:
    """Convex combination of decoded and maximum-uncertainty parameters."""
    if dec.regularization is None:
        raise NoRegularization("decoder has no uncertainty regularization")
    return forward(dec, z)


# ---------------------------------------------------------------------------
# KMeans (Lloyd with k-means++ seeding)


def kmeans_fit(points, k: int, rng: RngStream, iters: int = 100) -> np.ndarray:
    """Cluster centers for the uncertainty support proxy.

    Deterministic given the stream; empty clusters are re-seeded to the
    point farthest from its assigned center.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    if k < 1 or k > np.unique(pts, axis=0).shape[0]:
        raise InvalidK(f"k={k} exceeds the number of distinct points")
    gen = rng.generator

    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[gen.integers(n)]
    closest = np.sum((pts - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j] = pts[gen.integers(n)]
        else:
            centers[j] = pts[gen.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((pts - centers[j]) ** 2, axis=1))

    for _ in range(iters):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        labels = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        assigned = d2[np.arange(n), labels]
        for j in range(k):
            mask = labels == j
            if np.any(mask):
                new_centers[j] = pts[mask].mean(axis=0)
            else:
                new_centers[j] = pts[np.argmax(assigned)]
                assigned[np.argmax(assigned)] = 0.0
        if np.allclose(new_centers, centers, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    return centers


def kmeans_inertia(points, centers) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    return float(d2.min(axis=1).sum())


def compose_linear(dec: DecoderMap, a: np.ndarray, b=None) -> DecoderMap:
    """Decoder evaluating the original map at A z + b (latent relabeling)."""
    a = np.asarray(a, dtype=float)
    b = np.zeros(a.shape[0]) if b is None else np.asarray(b, dtype=float)
    if dec.pre_transform is not None:
        a0, b0 = dec.pre_transform
        a, b = a0 @ a, a0 @ b + b0
    return DecoderMap(
        latent_dim=dec.latent_dim,
        feature_count=dec.feature_count,
        family=dec.family,
        heads=dec.heads,
        regularization=dec.regularization,
        pre_transform=(a, b),
    )
