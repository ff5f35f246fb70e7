"""Fit diffuse + spherical-Gaussian lobes to a target color function.

The target is sampled on a deterministic Fibonacci direction set; fitting
alternates an exact linear solve for the diffuse color and lobe amplitudes
(axes and sharpness frozen) with backtracking gradient steps on the axes
(through normalization) and on log-sharpness.  Backtracking guarantees the
residual never increases from one iteration to the next.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ColorModel, ConfigError, GaussianPrimitive, Scene, SGLobe
from .sg import SHBlock, eval_sh, fibonacci_sphere

_EXCLUSION_COS = np.cos(np.radians(30.0))   # greedy init spacing


@dataclass
class FitConfig:
    n_lobes: int
    n_samples: int = 256
    max_iters: int = 200
    tol: float = 1e-6
    init_sharpness: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_lobes < 0:
            raise ConfigError(f"n_lobes must be >= 0, got {self.n_lobes}")
        need = 4 * (1 + 7 * self.n_lobes)
        if self.n_samples < need:
            raise ConfigError(
                f"n_samples={self.n_samples} underdetermines the fit, "
                f"need at least {need} for {self.n_lobes} lobes")


@dataclass
class FitResult:
    diffuse: np.ndarray          # (3,)
    lobes: list[SGLobe]
    residual: float              # RMS over sample entries
    residual_history: list[float]


def _rms(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _init_axes(dirs: np.ndarray, resid_norm: np.ndarray, n: int) -> np.ndarray:
    """Greedy largest-residual directions with angular exclusion."""
    picked = []
    available = np.ones(len(dirs), dtype=bool)
    score = resid_norm.copy()
    for _ in range(n):
        cand = np.where(available, score, -np.inf)
        k = int(np.argmax(cand))
        picked.append(dirs[k])
        available &= dirs @ dirs[k] < _EXCLUSION_COS
        if not available.any():
            available = np.ones(len(dirs), dtype=bool)
    return np.array(picked)


def fit_sg(dirs: np.ndarray, targets: np.ndarray, cfg: FitConfig) -> FitResult:
    """Least-squares fit of diffuse + n_lobes SG lobes to sampled colors."""
    dirs = np.asarray(dirs, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    K, m = len(dirs), cfg.n_lobes

    if m == 0:
        c0 = T.mean(axis=0)
        r = _rms(np.broadcast_to(c0, T.shape), T)
        return FitResult(diffuse=c0, lobes=[], residual=r, residual_history=[r])

    c0 = T.mean(axis=0)
    rn = np.linalg.norm(T - c0, axis=1)
    axes = _init_axes(dirs, rn, m)                    # (m,3) unit
    u = axes.copy()                                   # raw axes
    log_s = np.full(m, np.log(cfg.init_sharpness))

    def basis(u_, log_s_):
        mu = u_ / np.linalg.norm(u_, axis=1, keepdims=True)
        dot = dirs @ mu.T                             # (K,m)
        return mu, dot, np.exp(np.exp(log_s_)[None, :] * (dot - 1.0))

    def solve(e):
        phi = np.concatenate([np.ones((K, 1)), e], axis=1)
        coef, *_ = np.linalg.lstsq(phi, T, rcond=None)
        return coef, phi @ coef

    mu, dot, e = basis(u, log_s)
    coef, pred = solve(e)
    rms = _rms(pred, T)
    history = [rms]
    lr = 0.5

    for _ in range(cfg.max_iters):
        prev = rms
        # gradient step on raw axes and log-sharpness, backtracking on the
        # squared error so the objective can only go down
        amp = coef[1:]                                # (m,3)
        resid = T - pred                              # (K,3)
        ra = resid @ amp.T                            # (K,m)
        s = np.exp(log_s)
        common = -2.0 * ra * e                        # dF/de * e-part
        g_logs = (common * s[None, :] * (dot - 1.0)).sum(axis=0)
        g_mu = np.einsum("km,m,kc->mc", common, s, dirs)
        un = np.linalg.norm(u, axis=1, keepdims=True)
        muu = u / un
        g_u = (g_mu - muu * (g_mu * muu).sum(axis=1, keepdims=True)) / un

        f_old = float((resid ** 2).sum())
        step = lr
        for _ in range(25):
            u_try = u - step * g_u
            ls_try = log_s - step * g_logs
            mu_t, dot_t, e_t = basis(u_try, ls_try)
            coef_t, pred_t = solve(e_t)
            if float(((T - pred_t) ** 2).sum()) <= f_old:
                u, log_s = u_try, ls_try
                mu, dot, e, coef, pred = mu_t, dot_t, e_t, coef_t, pred_t
                lr = min(step * 1.5, 1e3)
                break
            step *= 0.5
        else:
            lr = max(lr * 0.5, 1e-12)

        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        rms = _rms(pred, T)
        history.append(rms)
        if abs(prev - rms) <= cfg.tol * max(prev, 1e-12):
            break

    s = np.exp(log_s)
    lobes = [SGLobe(axis=mu[i].astype(np.float32), sharpness=float(s[i]),
                    amplitude=coef[1 + i].astype(np.float32))
             for i in range(m)]
    return FitResult(diffuse=coef[0], lobes=lobes, residual=rms,
                     residual_history=history)


def fit_sg_to_sh(sh: SHBlock, cfg: FitConfig) -> FitResult:
    """Fit lobes to an SH color function sampled on the Fibonacci set."""
    dirs = fibonacci_sphere(cfg.n_samples)
    return fit_sg(dirs, eval_sh(dirs, sh), cfg)


def convert_scene(scene: Scene, n_lobes: int, n_samples: int = 256,
                  max_lobes: int | None = None, max_iters: int = 200,
                  tol: float = 1e-6) -> Scene:
    """Convert an SH-tagged scene to SG, one independent fit per primitive.

    The splat-export convention evaluates color as 0.5 + SH(v); the offset
    is a constant so it folds exactly into the fitted diffuse term.
    """
    if scene.color_model.kind != "sh":
        raise ConfigError("convert_scene expects an SH-tagged scene")
    if max_lobes is None:
        max_lobes = max(n_lobes, 3)
    if n_lobes > max_lobes:
        raise ConfigError(f"n_lobes={n_lobes} exceeds max_lobes={max_lobes}")
    cfg = FitConfig(n_lobes=n_lobes, n_samples=n_samples,
                    max_iters=max_iters, tol=tol)
    degree = scene.color_model.degree
    dirs = fibonacci_sphere(cfg.n_samples)
    prims = []
    residuals = []
    for prim, coeffs in zip(scene.primitives, scene.sh_coeffs):
        block = SHBlock(coefficients=coeffs, degree=degree)
        res = fit_sg(dirs, eval_sh(dirs, block), cfg)
        residuals.append(res.residual)
        prims.append(GaussianPrimitive(
            position=prim.position, rotation=prim.rotation, scale=prim.scale,
            opacity=prim.opacity,
            diffuse=(res.diffuse + 0.5).astype(np.float32),
            lobes=res.lobes))
    prov = dict(scene.provenance)
    prov.update({"converted_from": f"sh{degree}", "fit_lobes": n_lobes,
                 "fit_rms_mean": float(np.mean(residuals)) if residuals else 0.0})
    return Scene(primitives=prims, color_model=ColorModel.sg(max_lobes),
                 provenance=prov)
