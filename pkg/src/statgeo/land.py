"""Locally adaptive normal densities on the latent manifold.

The density is rho(z) = C * exp(-0.5 Log_mu(z)^T Gamma Log_mu(z)) with the
log map taken under the model's metric field. The normalization constant
is estimated by importance sampling in the tangent space with proposal
N(0, Gamma^{-1}); each sample is pushed through the exponential map and
weighted by the metric volume ratio sqrt(det M(Exp_mu(v)) / det M(mu)), so
C normalizes the density against the volume measure relative to the mean
point. Fitting runs gradient descent on the negative log-likelihood over
(mu, Gamma) with Gamma kept SPD through a log-Cholesky parametrization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEstimate, InvalidParam, NonConvergence
from .geodesic import EnergyConfig, exp_map_batch, log_map, log_map_batch
from .metric import LatentMetric
from .rng import RngStream


def _default_logmap_cfg() -> EnergyConfig:
    # single-segment splines keep the per-point optimizations cheap
    return EnergyConfig(segments=1, n_disc=16, max_iters=60, grad_tol=1e-6, jitter=0.0)


@dataclass
class LandModel:
    """Riemannian normal density: mean point, precision, normalizer."""

    mean: np.ndarray
    precision: np.ndarray
    norm_const: float
    metric: LatentMetric
    mc_samples: int = 256
    seed: int = 0
    logmap_cfg: EnergyConfig = field(default_factory=_default_logmap_cfg)
    converged: bool = True
    nll_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.precision = np.asarray(self.precision, dtype=float)
        if self.norm_const <= 0:
            raise InvalidParam("normalization constant must be > 0")
        if np.any(np.linalg.eigvalsh(self.precision) <= 0):
            raise InvalidParam("precision matrix must be positive definite")


def land_logpdf(model: LandModel, z, rng: RngStream | None = None) -> float:
    """log C - 0.5 v^T Gamma v with v the log map of z at the mean."""
    v = log_map(model.metric, model.mean, np.asarray(z, dtype=float),
                model.logmap_cfg, rng or RngStream(model.seed))
    return float(np.log(model.norm_const) - 0.5 * v @ model.precision @ v)


def land_logpdf_batch(model: LandModel, zs, rng: RngStream | None = None) -> np.ndarray:
    vs, _, _ = log_map_batch(
        model.metric, model.mean, np.atleast_2d(np.asarray(zs, dtype=float)),
        model.logmap_cfg, rng or RngStream(model.seed),
    )
    quad = np.einsum("mi,ij,mj->m", vs, model.precision, vs)
    return np.log(model.norm_const) - 0.5 * quad


def _tangent_proposal(precision, gen, n):
    """Draws from N(0, Gamma^{-1}) via the Cholesky factor of Gamma."""
    chol = np.linalg.cholesky(precision)
    xi = gen.standard_normal((n, precision.shape[0]))
    return np.linalg.solve(chol.T, xi.T).T


def land_normalizer_stats(
    mean,
    precision,
    metric: LatentMetric,
    rng: RngStream,
    n: int,
    exp_steps: int = 25,
    fd_step: float = 1e-4,
):
    """(C, standard error, effective sample size) of the MC normalizer."""
    mean = np.asarray(mean, dtype=float)
    precision = np.asarray(precision, dtype=float)
    d = mean.size
    if np.any(np.linalg.eigvalsh(precision) <= 0):
        raise InvalidParam("precision matrix must be positive definite")
    vs = _tangent_proposal(precision, rng.generator, n)
    ends = exp_map_batch(metric, np.tile(mean, (n, 1)), vs, steps=exp_steps, fd_step=fd_step)
    _, logdet_end = np.linalg.slogdet(metric.eval_batch(ends))
    _, logdet_mu = np.linalg.slogdet(metric.eval(mean))
    w = np.exp(0.5 * (logdet_end - logdet_mu))
    if not np.all(np.isfinite(w)):
        raise DegenerateEstimate("normalizer weights are not finite")
    ess = float(w.sum() ** 2 / np.maximum((w**2).sum(), 1e-300))
    if ess < 10.0:
        raise DegenerateEstimate(f"normalizer effective sample size {ess:.1f} < 10")
    sign, logdet_g = np.linalg.slogdet(precision)
    base = (2.0 * np.pi) ** (d / 2.0) * np.exp(-0.5 * logdet_g)
    inv_c = base * float(np.mean(w))
    c = 1.0 / inv_c
    se_w = float(np.std(w) / np.sqrt(n))
    se_c = c * se_w / max(float(np.mean(w)), 1e-300)
    return c, se_c, ess


def land_normalizer(mean, precision, metric, rng: RngStream, n: int, **kw) -> float:
    """Monte Carlo normalization constant C of the density."""
    return land_normalizer_stats(mean, precision, metric, rng, n, **kw)[0]


@dataclass
class LandFitConfig:
    max_iters: int = 40
    step_size: float = 0.25
    grad_tol: float = 1e-4
    fd_step: float = 1e-4
    mc_samples: int = 256
    exp_steps: int = 20
    logmap_cfg: EnergyConfig = field(default_factory=_default_logmap_cfg)


def _log_cholesky_pack(precision):
    chol = np.linalg.cholesky(precision)
    d = chol.shape[0]
    theta = []
    for i in range(d):
        for j in range(i + 1):
            theta.append(np.log(chol[i, i]) if i == j else chol[i, j])
    return np.array(theta)


def _log_cholesky_unpack(theta, d):
    chol = np.zeros((d, d))
    idx = 0
    for i in range(d):
        for j in range(i + 1):
            # clip so a wild line-search probe cannot overflow the factor
            chol[i, j] = np.exp(np.clip(theta[idx], -30.0, 30.0)) if i == j else theta[idx]
            idx += 1
    return chol @ chol.T


def land_fit(
    points,
    metric: LatentMetric,
    init: LandModel | None = None,
    cfg: LandFitConfig | None = None,
    rng: RngStream | None = None,
) -> LandModel:
    """Maximum likelihood (mu, Gamma) by gradient descent on the NLL.

    Log maps are recomputed whenever the mean moves (warm-started from the
    previous curves); the normalizer reuses one seed per outer iteration so
    finite differences see common random numbers.
    """
    cfg = cfg or LandFitConfig()
    rng = rng or RngStream(0)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts, d = pts.shape
    if n_pts < d + 1:
        raise InvalidParam(f"need at least {d + 1} points to fit, got {n_pts}")

    if init is not None:
        mu0, gamma0 = init.mean.copy(), init.precision.copy()
    else:
        mu0 = pts.mean(axis=0)
        cov = np.cov(pts.T) if n_pts > 1 else np.eye(d)
        cov = np.atleast_2d(cov) + 1e-6 * np.eye(d)
        gamma0 = np.linalg.inv(cov)

    theta0 = _log_cholesky_pack(gamma0)
    params = np.concatenate([mu0, theta0])
    n_theta = theta0.size

    warm = {"coeffs": None}

    def unpack(p):
        return p[:d], _log_cholesky_unpack(p[d:], d)

    def log_maps(mu, warm_coeffs=None):
        vs, _, coeffs = log_map_batch(
            metric, mu, pts, cfg.logmap_cfg, rng.child(1),
            warm_coeffs=warm_coeffs if warm_coeffs is not None else warm["coeffs"],
        )
        return vs, coeffs

    def nll(p, norm_seed, vs=None):
        mu, gamma = unpack(p)
        if vs is None:
            vs, _ = log_maps(mu)
        c, _, _ = land_normalizer_stats(
            mu, gamma, metric, rng.child(norm_seed), cfg.mc_samples,
            exp_steps=cfg.exp_steps,
        )
        quad = np.einsum("mi,ij,mj->m", vs, gamma, vs)
        return float(-n_pts * np.log(c) + 0.5 * quad.sum())

    vs_cur, warm["coeffs"] = log_maps(mu0)
    seed = 10_000
    e_cur = nll(params, seed, vs=vs_cur)
    trace = [e_cur]
    step = cfg.step_size
    converged = False
    for it in range(cfg.max_iters):
        seed = 10_000 + it
        e_cur = nll(params, seed, vs=vs_cur)
        grad = np.zeros_like(params)
        h = cfg.fd_step
        try:
            for i in range(params.size):
                probe = params.copy()
                probe[i] += h
                vs_p = vs_cur if i >= d else None  # theta moves leave log maps fixed
                e_plus = nll(probe, seed, vs=vs_p)
                probe[i] -= 2.0 * h
                e_minus = nll(probe, seed, vs=vs_p)
                grad[i] = (e_plus - e_minus) / (2.0 * h)
        except (DegenerateEstimate, InvalidParam, np.linalg.LinAlgError):
            break
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < cfg.grad_tol:
            converged = True
            break
        gsq = float(grad @ grad)
        accepted = False
        for _ in range(25):
            trial = params - step * grad
            mu_t, _ = unpack(trial)
            vs_t, coeffs_t = log_maps(mu_t)
            try:
                e_new = nll(trial, seed, vs=vs_t)
            except (DegenerateEstimate, InvalidParam, np.linalg.LinAlgError):
                e_new = np.inf
            if np.isfinite(e_new) and e_new <= e_cur - 1e-4 * step * gsq:
                params, e_cur = trial, e_new
                vs_cur, warm["coeffs"] = vs_t, coeffs_t
                trace.append(e_cur)
                accepted = True
                step = min(step * 1.5, 10.0)
                break
            step *= 0.5
        if not accepted:
            break

    mu, gamma = unpack(params)
    c, _, _ = land_normalizer_stats(
        mu, gamma, metric, rng.child(99_999), max(cfg.mc_samples, 1024),
        exp_steps=cfg.exp_steps,
    )
    model = LandModel(
        mean=mu,
        precision=gamma,
        norm_const=c,
        metric=metric,
        mc_samples=cfg.mc_samples,
        seed=rng.seed,
        logmap_cfg=cfg.logmap_cfg,
        converged=converged,
        nll_trace=trace,
    )
    if not converged and len(trace) <= 1:
        raise NonConvergence("density fit made no progress", last=model)
    return model
