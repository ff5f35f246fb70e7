"""Joint primitive/lobe sparsification under one parameter budget.

The constrained problem — minimize the rendering loss subject to
``11 * nnz(opacity) + 7 * nnz(sharpness) <= kappa`` — is split with proxy
copies of the opacity and sharpness vectors and Lagrange multipliers.
Each iteration takes penalized gradient steps on the primal variables;
every ``prox_every`` iterations the proxies are re-projected onto the
budget set (a factorized top-k keep) and the duals advance by the
primal-proxy residual.  The budget holds exactly on the proxies after
every projection; the run ends by zeroing primal entries outside the
final kept support so downstream hard removal is a pure threshold pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .render import (Camera, GradientSet, LossConfig, SceneParams,
                     accumulate_importance_params, loss_and_grads)
from .scene import (BASE_PARAMS_PER_PRIMITIVE, PARAMS_PER_LOBE, ConfigError,
                    NumericalFailure, Scene)
from .sg import dynamic_range_many

_OPACITY_OPERATORS = ("magnitude", "importance")
_SHARPNESS_OPERATORS = ("sharpness", "range")


@dataclass(frozen=True)
class GroupRates:
    """Per-parameter-group learning-rate multipliers (times the base eta)."""

    position: float = 1e-3
    quat: float = 1e-3
    log_scale: float = 2e-3
    opacity: float = 2.5e-2
    diffuse: float = 5e-3
    axis_raw: float = 2e-3
    sharpness: float = 2.5e-2
    amplitude: float = 5e-3


@dataclass(frozen=True)
class PrunerConfig:
    """Budget, penalties and schedule for one sparsification run.

    ``kappa`` is the total budget in parameter units (11 per kept
    primitive, 7 per kept lobe); ``kappa_o``/``kappa_s`` are the
    factorized keep counts and must satisfy
    ``11*kappa_o + 7*kappa_s <= kappa``.
    """

    kappa: int
    kappa_o: int
    kappa_s: int
    delta: float = 5e-3
    eta: float = 1.0
    iters: int = 1000
    prox_every: int | None = 50
    opacity_operator: str = "magnitude"
    sharpness_operator: str = "sharpness"
    seed: int = 0
    group_rates: GroupRates = field(default_factory=GroupRates)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.prox_every is not None and self.prox_every < 1:
            raise ConfigError("prox_every must be >= 1 (or None to disable)")
        if self.opacity_operator not in _OPACITY_OPERATORS:
            raise ConfigError(f"unknown opacity operator {self.opacity_operator!r}")
        if self.sharpness_operator not in _SHARPNESS_OPERATORS:
            raise ConfigError(f"unknown sharpness operator {self.sharpness_operator!r}")
        if self.kappa_o < 0 or self.kappa_s < 0:
            raise ConfigError("keep counts must be non-negative")
        if (BASE_PARAMS_PER_PRIMITIVE * self.kappa_o
                + PARAMS_PER_LOBE * self.kappa_s > self.kappa):
            raise ConfigError(
                f"split kappa_o={self.kappa_o}, kappa_s={self.kappa_s} "
                f"exceeds budget kappa={self.kappa}")

    @property
    def delta_o(self) -> float:
        return self.delta * BASE_PARAMS_PER_PRIMITIVE

    @property
    def delta_s(self) -> float:
        return self.delta * PARAMS_PER_LOBE

    @staticmethod
    def from_budget(n_primitives: int, n_slots: int, kappa: int,
                    keep_fraction: float, **kw) -> "PrunerConfig":
        """Primitives get priority: kappa_o = ceil(f*N), lobes the rest."""
        kappa_o = min(int(np.ceil(keep_fraction * n_primitives)), n_primitives)
        kappa_s = min((kappa - BASE_PARAMS_PER_PRIMITIVE * kappa_o)
                      // PARAMS_PER_LOBE, n_slots)
        if kappa_s < 0:
            raise ConfigError(f"budget kappa={kappa} cannot cover "
                              f"{kappa_o} primitives")
        return PrunerConfig(kappa=kappa, kappa_o=kappa_o, kappa_s=int(kappa_s), **kw)

    @staticmethod
    def from_keep_ratios(n_primitives: int, n_slots: int,
                         keep_primitives: float, keep_lobes: float,
                         **kw) -> "PrunerConfig":
        """Derive the budget from target keep ratios for both factors."""
        kappa_o = min(int(np.ceil(keep_primitives * n_primitives)), n_primitives)
        kappa_s = min(int(np.floor(keep_lobes * n_slots)), n_slots)
        kappa = (BASE_PARAMS_PER_PRIMITIVE * kappa_o
                 + PARAMS_PER_LOBE * kappa_s)
        return PrunerConfig(kappa=kappa, kappa_o=kappa_o, kappa_s=kappa_s, **kw)


@dataclass
class PrunerState:
    """Primal parameters plus the proxy and dual vectors."""

    params: SceneParams
    proxy_o: np.ndarray
    proxy_s: np.ndarray
    dual_o: np.ndarray
    dual_s: np.ndarray
    iteration: int = 0

    @staticmethod
    def init(params: SceneParams) -> "PrunerState":
        # proxies start at the primal values, duals at zero
        return PrunerState(params=params,
                           proxy_o=params.opacity.copy(),
                           proxy_s=params.sharpness.copy(),
                           dual_o=np.zeros_like(params.opacity),
                           dual_s=np.zeros_like(params.sharpness))


@dataclass
class TraceRow:
    iteration: int
    loss: float
    residual_o: float
    residual_s: float
    active_primitives: int
    active_lobes: int
    budget_units: int


TRACE_FIELDS = ("iteration", "loss", "residual_o", "residual_s",
                "active_primitives", "active_lobes", "budget_units")


def _check_finite(grads: GradientSet, params: SceneParams):
    for name in ("position", "quat", "log_scale", "opacity", "diffuse",
                 "axis_raw", "sharpness", "amplitude"):
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            bad = np.nonzero(~np.isfinite(g.reshape(params.n, -1)).all(axis=1))[0]
            raise NumericalFailure(
                f"non-finite gradient in {name} at primitive {int(bad[0])}",
                index=int(bad[0]))


def gradient_step(state: PrunerState, view: tuple[Camera, np.ndarray],
                  cfg: PrunerConfig) -> float:
    """One penalized descent step on one view; returns the data loss.

    With a nonzero penalty the sharpness gradient is evaluated after the
    opacity update (a second backward pass), matching the update order of
    the split scheme; with delta == 0 everything steps simultaneously off
    a single backward pass, which is plain gradient descent.
    """
    cam, target = view
    p = state.params
    r = cfg.group_rates
    eta = cfg.eta

    loss_val, g1 = loss_and_grads(p, cam, target, cfg.loss_cfg, cfg.background)
    _check_finite(g1, p)

    if cfg.delta == 0.0:
        p.opacity -= eta * r.opacity * g1.opacity
        p.sharpness -= eta * r.sharpness * g1.sharpness
    else:
        p.opacity -= eta * r.opacity * (
            g1.opacity + cfg.delta_o * (p.opacity - state.proxy_o + state.dual_o))
        np.clip(p.opacity, 0.0, 1.0, out=p.opacity)
        _, g2 = loss_and_grads(p, cam, target, cfg.loss_cfg, cfg.background)
        _check_finite(g2, p)
        p.sharpness -= eta * r.sharpness * (
            g2.sharpness + cfg.delta_s * (p.sharpness - state.proxy_s + state.dual_s))

    p.position -= eta * r.position * g1.position
    p.quat -= eta * r.quat * g1.quat
    p.log_scale -= eta * r.log_scale * g1.log_scale
    p.diffuse -= eta * r.diffuse * g1.diffuse
    p.axis_raw -= eta * r.axis_raw * g1.axis_raw
    p.amplitude -= eta * r.amplitude * g1.amplitude

    np.clip(p.opacity, 0.0, 1.0, out=p.opacity)
    np.maximum(p.sharpness, 0.0, out=p.sharpness)
    state.iteration += 1
    return loss_val


def _top_k_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep mask for the k best scores; ties keep the lower index."""
    mask = np.zeros(scores.size, dtype=bool)
    if k <= 0:
        return mask
    if k >= scores.size:
        return ~mask
    order = np.argsort(-scores, kind="stable")
    mask[order[:k]] = True
    return mask


def prox_project(o_in: np.ndarray, s_in: np.ndarray, cfg: PrunerConfig,
                 importance: np.ndarray | None = None,
                 range_sharpness: np.ndarray | None = None,
                 range_amplitude: np.ndarray | None = None,
                 slot_mask: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Project (opacity, sharpness) inputs onto the factorized budget set.

    Keeps ``kappa_o`` opacity entries (by magnitude or by the supplied
    importance scores) and ``kappa_s`` sharpness slots (by magnitude or by
    the lobes' dynamic range computed from the current sharpness and
    amplitudes), zeroing everything else.  Kept values pass through
    unchanged, so the magnitude variant is the exact L2 projection.
    """
    o_in = np.asarray(o_in, dtype=np.float64)
    s_shape = np.shape(s_in)
    s_flat = np.asarray(s_in, dtype=np.float64).ravel()

    if cfg.kappa_o > o_in.size:
        raise ConfigError(f"kappa_o={cfg.kappa_o} exceeds {o_in.size} primitives")
    n_slots = s_flat.size if slot_mask is None else int(np.sum(slot_mask))
    if cfg.kappa_s > n_slots:
        raise ConfigError(f"kappa_s={cfg.kappa_s} exceeds {n_slots} lobe slots")

    if cfg.opacity_operator == "importance":
        if importance is None:
            raise ConfigError("importance scores required for the "
                              "importance operator")
        o_scores = np.asarray(importance, dtype=np.float64)
        if o_scores.shape != o_in.shape:
            raise ConfigError("importance shape does not match opacity")
    else:
        o_scores = np.abs(o_in)

    if cfg.sharpness_operator == "range":
        if range_sharpness is None or range_amplitude is None:
            raise ConfigError("range operator needs current sharpness and "
                              "amplitudes")
        s_scores = dynamic_range_many(
            np.asarray(range_sharpness).ravel(),
            np.asarray(range_amplitude).reshape(-1, 3))
    else:
        s_scores = np.abs(s_flat)

    if slot_mask is not None:
        s_scores = np.where(np.asarray(slot_mask).ravel(), s_scores, -np.inf)

    o_keep = _top_k_mask(o_scores, cfg.kappa_o)
    s_keep = _top_k_mask(s_scores, cfg.kappa_s)
    return (np.where(o_keep, o_in, 0.0),
            np.where(s_keep, s_flat, 0.0).reshape(s_shape))


def dual_update(state: PrunerState) -> PrunerState:
    """Advance the multipliers by the primal-proxy residual."""
    state.dual_o += state.params.opacity - state.proxy_o
    state.dual_s += state.params.sharpness - state.proxy_s
    return state


def _prox_inputs(state: PrunerState, cfg: PrunerConfig,
                 views: list[tuple[Camera, np.ndarray]] | None):
    importance = None
    if cfg.opacity_operator == "importance":
        if not views:
            raise ConfigError("importance operator needs training views")
        importance = accumulate_importance_params(
            state.params, [cam for cam, _ in views], cfg.background)
    return importance


def _proximal_event(state: PrunerState, cfg: PrunerConfig,
                    importance: np.ndarray | None):
    p = state.params
    proxy_o, proxy_s = prox_project(
        p.opacity + state.dual_o, p.sharpness + state.dual_s, cfg,
        importance=importance, range_sharpness=p.sharpness,
        range_amplitude=p.amplitude, slot_mask=p.lobe_mask)
    state.proxy_o, state.proxy_s = proxy_o, proxy_s
    active_o = int(np.count_nonzero(proxy_o))
    active_s = int(np.count_nonzero(proxy_s))
    units = (BASE_PARAMS_PER_PRIMITIVE * active_o + PARAMS_PER_LOBE * active_s)
    assert units <= cfg.kappa, "budget violated by the proximal projection"
    return active_o, active_s, units


def run(scene: Scene, views: list[tuple[Camera, np.ndarray]],
        cfg: PrunerConfig) -> tuple[Scene, list[TraceRow]]:
    """Run the full budget-constrained optimization on a scene."""
    params = SceneParams.from_scene(scene)
    state = PrunerState.init(params)
    trace = run_state(state, views, cfg)
    out = params.to_scene(scene.color_model, scene.provenance)
    return out, trace


def run_state(state: PrunerState, views: list[tuple[Camera, np.ndarray]],
              cfg: PrunerConfig) -> list[TraceRow]:
    if not views:
        raise ConfigError("need at least one training view")
    rng = np.random.default_rng(cfg.seed)
    p = state.params
    trace: list[TraceRow] = []
    order = rng.permutation(len(views))
    pos = 0
    loss_val = float("nan")

    def record(iteration, active_o, active_s, units):
        trace.append(TraceRow(
            iteration=iteration, loss=loss_val,
            residual_o=float(np.linalg.norm(p.opacity - state.proxy_o)),
            residual_s=float(np.linalg.norm(p.sharpness - state.proxy_s)),
            active_primitives=active_o, active_lobes=active_s,
            budget_units=units))

    ended_with_event = False
    for k in range(cfg.iters):
        if pos == len(order):
            order = rng.permutation(len(views))
            pos = 0
        loss_val = gradient_step(state, views[order[pos]], cfg)
        pos += 1
        ended_with_event = False
        if cfg.prox_every is not None and (k + 1) % cfg.prox_every == 0:
            importance = _prox_inputs(state, cfg, views)
            record(k + 1, *_proximal_event(state, cfg, importance))
            dual_update(state)
            ended_with_event = True

    if cfg.prox_every is not None:
        if not ended_with_event:
            # terminal projection (no dual update: nothing consumes it)
            importance = _prox_inputs(state, cfg, views)
            record(cfg.iters, *_proximal_event(state, cfg, importance))
        # Zero primal entries outside the final kept support so the budget
        # carries through threshold-based hard removal downstream.
        p.opacity = np.where(state.proxy_o != 0.0, p.opacity, 0.0)
        p.sharpness = np.where(state.proxy_s != 0.0, p.sharpness, 0.0)
    return trace


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_FIELDS)
        for row in trace:
            writer.writerow([getattr(row, f) for f in TRACE_FIELDS])
