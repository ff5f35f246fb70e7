"""CPU splat renderer with analytic gradients.

Primitives are projected with the first-order (EWA) approximation:
``cov2d = J W Sigma Wt Jt`` plus a low-pass floor on the diagonal, then
alpha-blended per pixel in global front-to-back depth order.  Color is
evaluated once per primitive per camera along the camera-to-center
direction.  The backward pass reproduces the forward blend exactly,
including the transmittance products, the alpha clamp and the termination
cutoff, so gradients can be validated against central finite differences.

All math runs in float64; scenes are converted to packed parameter arrays
(`SceneParams`) whose layout the optimizer shares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .scene import ColorModel, GaussianPrimitive, Scene, SGLobe

ALPHA_MAX = 0.99          # standard splat-renderer clamp on per-pixel alpha
T_CUTOFF = 1e-4           # stop blending once transmittance falls below
LOWPASS_FLOOR = 0.3       # px^2 added to the 2D covariance diagonal
_PIXEL_CHUNK = 4096


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera rigid transform plus intrinsics."""

    rotation: np.ndarray      # (3,3) world-to-camera
    translation: np.ndarray   # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @staticmethod
    def look_at(eye, target, up=(0.0, 0.0, 1.0), fx=None, fy=None,
                width=64, height=64, near=0.1) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])          # rows: camera axes, z forward
        t = -R @ eye
        if fx is None:
            fx = 1.2 * width
        if fy is None:
            fy = fx
        return Camera(rotation=R, translation=t, fx=fx, fy=fy,
                      cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height, near=near)


@dataclass
class Splat2D:
    """One projected primitive, ready for alpha blending."""

    mean2d: np.ndarray    # (2,) pixels
    cov2d: np.ndarray     # (2,2) pixels^2, after the low-pass floor
    depth: float          # camera-space z
    color: np.ndarray     # (3,) view-evaluated, clamped at 0
    opacity: float


@dataclass
class SceneParams:
    """Packed optimizer-space arrays for one scene.

    Opacity and sharpness are stored directly (their activated values);
    scales are log-parameterized; quaternions and lobe axes are free
    vectors normalized on use.  Lobe slots are padded to ``max_lobes``
    with ``lobe_mask`` marking the real ones.
    """

    position: np.ndarray    # (N,3)
    quat: np.ndarray        # (N,4)
    log_scale: np.ndarray   # (N,3)
    opacity: np.ndarray     # (N,)
    diffuse: np.ndarray     # (N,3)
    axis_raw: np.ndarray    # (N,L,3)
    sharpness: np.ndarray   # (N,L)
    amplitude: np.ndarray   # (N,L,3)
    lobe_mask: np.ndarray   # (N,L) bool

    @property
    def n(self) -> int:
        return self.position.shape[0]

    @property
    def max_lobes(self) -> int:
        return self.axis_raw.shape[1]

    def copy(self) -> "SceneParams":
        return SceneParams(*(getattr(self, f).copy() for f in _PARAM_FIELDS),
                           lobe_mask=self.lobe_mask.copy())

    @staticmethod
    def from_scene(scene: Scene) -> "SceneParams":
        scene.require_sg("parameter packing")
        n = len(scene)
        lmax = scene.color_model.max_lobes
        p = SceneParams(
            position=np.zeros((n, 3)), quat=np.zeros((n, 4)),
            log_scale=np.zeros((n, 3)), opacity=np.zeros(n),
            diffuse=np.zeros((n, 3)),
            axis_raw=np.zeros((n, lmax, 3)), sharpness=np.zeros((n, lmax)),
            amplitude=np.zeros((n, lmax, 3)),
            lobe_mask=np.zeros((n, lmax), dtype=bool))
        p.axis_raw[:, :, 2] = 1.0   # placeholder axis for padded slots
        for i, prim in enumerate(scene.primitives):
            p.position[i] = prim.position
            p.quat[i] = prim.rotation
            p.log_scale[i] = np.log(prim.scale.astype(np.float64))
            p.opacity[i] = prim.opacity
            p.diffuse[i] = prim.diffuse
            for j, lobe in enumerate(prim.lobes):
                p.axis_raw[i, j] = lobe.axis
                p.sharpness[i, j] = lobe.sharpness
                p.amplitude[i, j] = lobe.amplitude
                p.lobe_mask[i, j] = True
        return p

    def to_scene(self, color_model: ColorModel | None = None,
                 provenance: dict | None = None) -> Scene:
        if color_model is None:
            color_model = ColorModel.sg(self.max_lobes)
        prims = []
        for i in range(self.n):
            q = self.quat[i]
            q = q / np.linalg.norm(q)
            lobes = []
            for j in range(self.max_lobes):
                if not self.lobe_mask[i, j]:
                    continue
                u = self.axis_raw[i, j]
                lobes.append(SGLobe(axis=(u / np.linalg.norm(u)).astype(np.float32),
                                    sharpness=max(float(self.sharpness[i, j]), 0.0),
                                    amplitude=self.amplitude[i, j].astype(np.float32)))
            prims.append(GaussianPrimitive(
                position=self.position[i].astype(np.float32),
                rotation=q.astype(np.float32),
                scale=np.exp(self.log_scale[i]).astype(np.float32),
                opacity=float(np.clip(self.opacity[i], 0.0, 1.0)),
                diffuse=self.diffuse[i].astype(np.float32),
                lobes=lobes))
        return Scene(primitives=prims, color_model=color_model,
                     provenance=dict(provenance or {}))


_PARAM_FIELDS = ("position", "quat", "log_scale", "opacity", "diffuse",
                 "axis_raw", "sharpness", "amplitude")


@dataclass
class GradientSet:
    """Partials of the scalar loss, shaped exactly like SceneParams."""

    position: np.ndarray
    quat: np.ndarray
    log_scale: np.ndarray
    opacity: np.ndarray
    diffuse: np.ndarray
    axis_raw: np.ndarray
    sharpness: np.ndarray
    amplitude: np.ndarray

    @staticmethod
    def zeros_like(p: SceneParams) -> "GradientSet":
        return GradientSet(*(np.zeros_like(getattr(p, f)) for f in _PARAM_FIELDS))


@dataclass(frozen=True)
class LossConfig:
    """(1-lambda)*L1 + lambda*(1-SSIM); SSIM uses an 11x11 Gaussian window."""

    lambda_ssim: float = 0.2
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (w, x, y, z), batched."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return np.stack([row0, row1, row2], axis=-2)


def _drot_dquat(q: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(unit quaternion): (..., 4, 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    o = np.zeros_like(w)

    def m(r0, r1, r2):
        return np.stack([np.stack(r0, -1), np.stack(r1, -1), np.stack(r2, -1)], -2)

    dw = m([o, -z, y], [z, o, -x], [-y, x, o])
    dx = m([o, y, z], [y, -2 * x, -w], [z, w, -2 * x])
    dy = m([-2 * y, x, w], [x, o, z], [-w, z, -2 * y])
    dz = m([-2 * z, -w, x], [w, -2 * z, y], [x, y, o])
    return 2.0 * np.stack([dw, dx, dy, dz], axis=-3)


@dataclass
class _Projected:
    """Per-visible-primitive projection data, sorted front to back."""

    orig_idx: np.ndarray   # (V,) indices into the original primitive list
    mean2d: np.ndarray     # (V,2)
    cov2d: np.ndarray      # (V,2,2) after floor
    conic: np.ndarray      # (V,2,2)
    depth: np.ndarray      # (V,)
    color: np.ndarray      # (V,3) clamped
    color_pre: np.ndarray  # (V,3) before clamp
    opacity: np.ndarray    # (V,)
    # caches for the backward pass
    p_cam: np.ndarray      # (V,3)
    M: np.ndarray          # (V,2,3)  J @ W
    Sigma: np.ndarray      # (V,3,3)
    R: np.ndarray          # (V,3,3)
    qhat: np.ndarray       # (V,4)
    qnorm: np.ndarray      # (V,)
    vdir: np.ndarray       # (V,3)
    rdist: np.ndarray      # (V,)
    mu: np.ndarray         # (V,L,3) normalized lobe axes
    unorm: np.ndarray      # (V,L) raw-axis norms
    eterm: np.ndarray      # (V,L) exp(s*(mu.v - 1))
    lmask: np.ndarray      # (V,L)


def _prepare(p: SceneParams, cam: Camera,
             lowpass: float = LOWPASS_FLOOR) -> _Projected | None:
    W = cam.rotation
    p_cam = p.position @ W.T + cam.translation
    vis = p_cam[:, 2] > cam.near
    if not np.any(vis):
        return None
    idx = np.nonzero(vis)[0]
    pc = p_cam[idx]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]

    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], -1)

    qn = np.linalg.norm(p.quat[idx], axis=-1)
    qhat = p.quat[idx] / qn[:, None]
    R = quat_to_rot(qhat)
    D = np.exp(2.0 * p.log_scale[idx])
    Sigma = np.einsum("nij,nj,nkj->nik", R, D, R)

    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z ** 2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z ** 2
    M = J @ W
    cov2d = np.einsum("nij,njk,nlk->nil", M, Sigma, M)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = cov2d[:, 1, 1] / det
    conic[:, 1, 1] = cov2d[:, 0, 0] / det
    conic[:, 0, 1] = -cov2d[:, 0, 1] / det
    conic[:, 1, 0] = -cov2d[:, 1, 0] / det

    delta = p.position[idx] - cam.center
    rdist = np.linalg.norm(delta, axis=-1)
    vdir = delta / rdist[:, None]

    un = np.linalg.norm(p.axis_raw[idx], axis=-1)
    mu = p.axis_raw[idx] / un[..., None]
    dot = np.einsum("nlk,nk->nl", mu, vdir)
    eterm = np.exp(p.sharpness[idx] * (dot - 1.0))
    lmask = p.lobe_mask[idx]
    color_pre = p.diffuse[idx] + np.einsum(
        "nl,nlc->nc", eterm * lmask, p.amplitude[idx])
    color = np.maximum(color_pre, 0.0)

    order = np.argsort(z, kind="stable")

    def s(a):
        return np.ascontiguousarray(a[order])

    return _Projected(
        orig_idx=idx[order], mean2d=s(mean2d), cov2d=s(cov2d), conic=s(conic),
        depth=s(z), color=s(color), color_pre=s(color_pre),
        opacity=s(p.opacity[idx]), p_cam=s(pc), M=s(M), Sigma=s(Sigma),
        R=s(R), qhat=s(qhat), qnorm=s(qn), vdir=s(vdir), rdist=s(rdist),
        mu=s(mu), unorm=s(un), eterm=s(eterm), lmask=s(lmask))


def project(prim: GaussianPrimitive, cam: Camera,
            lowpass: float = LOWPASS_FLOOR) -> Splat2D | None:
    """Project one primitive; None when its center is behind the near plane."""
    params = SceneParams.from_scene(
        Scene([prim], ColorModel.sg(max(len(prim.lobes), 1))))
    proj = _prepare(params, cam, lowpass=lowpass)
    if proj is None:
        return None
    return Splat2D(mean2d=proj.mean2d[0], cov2d=proj.cov2d[0],
                   depth=float(proj.depth[0]), color=proj.color[0],
                   opacity=float(proj.opacity[0]))


def _pixel_centers(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(cam.width, dtype=np.float64) + 0.5
    ys = np.arange(cam.height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


@dataclass
class _BlendChunk:
    """Blend state for one pixel chunk (all arrays (V, P) unless noted)."""

    dx: np.ndarray
    dy: np.ndarray
    g2d: np.ndarray
    a_raw: np.ndarray
    om: np.ndarray        # 1 - clamped alpha
    tprev: np.ndarray     # transmittance before each primitive
    keep: np.ndarray | None   # None when the cutoff never triggered
    w: np.ndarray         # blending weights actually composited
    tbg: np.ndarray       # (P,) background transmittance


def _chunk_blend(proj: _Projected, px: np.ndarray, py: np.ndarray) -> _BlendChunk:
    """Alpha-blend one pixel chunk front to back."""
    dx = px[None, :] - proj.mean2d[:, 0:1]
    dy = py[None, :] - proj.mean2d[:, 1:2]
    c00 = proj.conic[:, 0, 0][:, None]
    c01 = proj.conic[:, 0, 1][:, None]
    c11 = proj.conic[:, 1, 1][:, None]
    # q = c00 dx^2 + 2 c01 dx dy + c11 dy^2, built with two temporaries
    q = c00 * dx
    q += (2.0 * c01) * dy
    q *= dx
    tmp = dy * dy
    tmp *= c11
    q += tmp
    q *= -0.5
    g2d = np.exp(q, out=q)
    a_raw = proj.opacity[:, None] * g2d
    om = np.minimum(a_raw, ALPHA_MAX, out=tmp)
    np.subtract(1.0, om, out=om)
    tcum = np.cumprod(om, axis=0)
    tprev = np.empty_like(tcum)
    tprev[0] = 1.0
    tprev[1:] = tcum[:-1]
    if tcum[-1].min() >= T_CUTOFF:
        keep = None
        tbg = tcum[-1].copy()
        w = np.subtract(1.0, om, out=tcum)    # tcum not needed past tbg
        w *= tprev
    else:
        keep = tcum >= T_CUTOFF
        tbg = np.min(np.where(keep, tcum, 1.0), axis=0)
        w = np.subtract(1.0, om, out=tcum)
        w *= tprev
        w *= keep
    return _BlendChunk(dx=dx, dy=dy, g2d=g2d, a_raw=a_raw, om=om,
                       tprev=tprev, keep=keep, w=w, tbg=tbg)


def _render_params(p: SceneParams, cam: Camera, background,
                   weight_sums: np.ndarray | None = None) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    img = np.empty((cam.height * cam.width, 3))
    proj = _prepare(p, cam)
    if proj is None:
        img[:] = bg
        return img.reshape(cam.height, cam.width, 3)
    gx, gy = _pixel_centers(cam)
    for lo in range(0, gx.size, _PIXEL_CHUNK):
        sl = slice(lo, min(lo + _PIXEL_CHUNK, gx.size))
        blend = _chunk_blend(proj, gx[sl], gy[sl])
        img[sl] = blend.w.T @ proj.color + blend.tbg[:, None] * bg
        if weight_sums is not None:
            np.add.at(weight_sums, proj.orig_idx, blend.w.sum(axis=1))
    return img.reshape(cam.height, cam.width, 3)


def render(scene: Scene, cam: Camera, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Render an (H, W, 3) float image, front-to-back alpha blending."""
    return _render_params(SceneParams.from_scene(scene), cam, background)


def accumulate_importance(scene: Scene, cams: list[Camera],
                          background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Per-primitive sum of blending weights actually composited."""
    p = SceneParams.from_scene(scene)
    return accumulate_importance_params(p, cams, background)


def accumulate_importance_params(p: SceneParams, cams: list[Camera],
                                 background=(0.0, 0.0, 0.0)) -> np.ndarray:
    sums = np.zeros(p.n)
    for cam in cams:
        _render_params(p, cam, background, weight_sums=sums)
    return sums


# --------------------------------------------------------------------------
# loss: (1-lambda)*L1 + lambda*(1-SSIM)
# --------------------------------------------------------------------------

def _gauss_window(window: int, sigma: float) -> np.ndarray:
    t = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _filt(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    out = correlate1d(x, k, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, k, axis=1, mode="constant", cval=0.0)


def _ssim_terms(img, target, cfg: LossConfig):
    k = _gauss_window(cfg.window, cfg.sigma)
    mx = np.stack([_filt(img[..., c], k) for c in range(3)], -1)
    my = np.stack([_filt(target[..., c], k) for c in range(3)], -1)
    mxx = np.stack([_filt(img[..., c] ** 2, k) for c in range(3)], -1)
    myy = np.stack([_filt(target[..., c] ** 2, k) for c in range(3)], -1)
    mxy = np.stack([_filt(img[..., c] * target[..., c], k) for c in range(3)], -1)
    sx = mxx - mx * mx
    sy = myy - my * my
    sxy = mxy - mx * my
    a1 = 2 * mx * my + cfg.c1
    a2 = 2 * sxy + cfg.c2
    b1 = mx * mx + my * my + cfg.c1
    b2 = sx + sy + cfg.c2
    smap = (a1 * a2) / (b1 * b2)
    return k, mx, my, a1, a2, b1, b2, smap


def ssim(img: np.ndarray, target: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    *_, smap = _ssim_terms(img, target, cfg)
    return float(smap.mean())


def _ssim_grad(img, target, cfg: LossConfig):
    """d(mean SSIM)/d(img), exact for the zero-padded window convolution."""
    k, mx, my, a1, a2, b1, b2, smap = _ssim_terms(img, target, cfg)
    inv = 1.0 / (b1 * b2)
    dA1 = a2 * inv
    dA2 = a1 * inv
    dB1 = -smap / b1
    dB2 = -smap / b2
    # S depends on img through mu_x, m_xx and m_xy
    dmu = dA1 * 2 * my + dB1 * 2 * mx + dB2 * (-2 * mx) + 2 * dA2 * (-my)
    dmxx = dB2
    dmxy = 2 * dA2
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = (_filt(dmu[..., c], k)
                       + 2 * img[..., c] * _filt(dmxx[..., c], k)
                       + target[..., c] * _filt(dmxy[..., c], k))
    return out / img.size, smap


def loss(img: np.ndarray, target: np.ndarray,
         cfg: LossConfig = LossConfig()) -> float:
    if img.shape != target.shape:
        raise ValueError(f"image shape {img.shape} != target {target.shape}")
    l1 = float(np.abs(img - target).mean())
    if cfg.lambda_ssim == 0.0:
        return (1.0 - cfg.lambda_ssim) * l1
    return (1.0 - cfg.lambda_ssim) * l1 + cfg.lambda_ssim * (1.0 - ssim(img, target, cfg))


def _loss_and_dimg(img, target, cfg: LossConfig):
    if img.shape != target.shape:
        raise ValueError(f"image shape {img.shape} != target {target.shape}")
    diff = img - target
    l1 = float(np.abs(diff).mean())
    dimg = (1.0 - cfg.lambda_ssim) * np.sign(diff) / diff.size
    if cfg.lambda_ssim == 0.0:
        return (1.0 - cfg.lambda_ssim) * l1, dimg
    ds, smap = _ssim_grad(img, target, cfg)
    total = (1.0 - cfg.lambda_ssim) * l1 + cfg.lambda_ssim * (1.0 - float(smap.mean()))
    return total, dimg - cfg.lambda_ssim * ds


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def _backward_from_blend(p: SceneParams, cam: Camera, proj: _Projected,
                         blend_chunks, dimg: np.ndarray,
                         background) -> GradientSet:
    """Accumulate d(loss)/d(params) given d(loss)/d(image).

    ``blend_chunks`` yields (pixel slice, _BlendChunk) pairs covering the
    image in order; the chunks may be cached from the forward pass or
    recomputed on the fly.
    """
    grads = GradientSet.zeros_like(p)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    g_flat = dimg.reshape(-1, 3)

    V = proj.orig_idx.size
    d_color = np.zeros((V, 3))
    d_opacity = np.zeros(V)
    d_mean2d = np.zeros((V, 2))
    d_conic = np.zeros((V, 2, 2))

    for sl, b in blend_chunks:
        g = g_flat[sl]

        cg = proj.color @ g.T                     # (V,Pc)
        contrib = b.w * cg
        after = np.flip(np.cumsum(np.flip(contrib, 0), 0), 0)
        after -= contrib
        after += b.tbg[None, :] * (g @ bg)[None, :]
        after /= b.om
        d_alpha = np.multiply(b.tprev, cg, out=contrib)
        d_alpha -= after
        if b.keep is not None:
            d_alpha *= b.keep

        d_color += b.w @ g
        d_alpha *= b.a_raw < ALPHA_MAX            # alpha-clamp subgradient
        d_opacity += (d_alpha * b.g2d).sum(axis=1)
        dq = d_alpha
        dq *= b.g2d
        dq *= -0.5 * proj.opacity[:, None]

        c00 = proj.conic[:, 0, 0][:, None]
        c01 = proj.conic[:, 0, 1][:, None]
        c11 = proj.conic[:, 1, 1][:, None]
        t = np.multiply(c00, b.dx, out=after)     # reuse the big buffer
        t += c01 * b.dy
        t *= dq
        d_mean2d[:, 0] += t.sum(axis=1) * -2.0
        np.multiply(c01, b.dx, out=t)
        t += c11 * b.dy
        t *= dq
        d_mean2d[:, 1] += t.sum(axis=1) * -2.0
        dqdx = np.multiply(dq, b.dx, out=t)
        d_conic[:, 0, 0] += (dqdx * b.dx).sum(axis=1)
        dxy = (dqdx * b.dy).sum(axis=1)
        d_conic[:, 0, 1] += dxy
        d_conic[:, 1, 0] += dxy
        np.multiply(dq, b.dy, out=dqdx)
        d_conic[:, 1, 1] += (dqdx * b.dy).sum(axis=1)

    # conic -> cov2d (through the matrix inverse)
    d_cov = -np.einsum("nij,njk,nkl->nil", proj.conic, d_conic, proj.conic)

    # cov2d = M Sigma Mt + floor
    d_Sigma = np.einsum("nji,njk,nkl->nil", proj.M, d_cov, proj.M)
    d_M = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov, proj.M, proj.Sigma)
    d_J = d_M @ cam.rotation.T                      # M = J W

    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    fx, fy = cam.fx, cam.fy
    d_pcam = np.zeros((V, 3))
    d_pcam[:, 0] = d_J[:, 0, 2] * (-fx / z ** 2)
    d_pcam[:, 1] = d_J[:, 1, 2] * (-fy / z ** 2)
    d_pcam[:, 2] = (d_J[:, 0, 0] * (-fx / z ** 2)
                    + d_J[:, 1, 1] * (-fy / z ** 2)
                    + d_J[:, 0, 2] * (2 * fx * x / z ** 3)
                    + d_J[:, 1, 2] * (2 * fy * y / z ** 3))
    d_pcam[:, 0] += d_mean2d[:, 0] * fx / z
    d_pcam[:, 1] += d_mean2d[:, 1] * fy / z
    d_pcam[:, 2] += (-d_mean2d[:, 0] * fx * x / z ** 2
                     - d_mean2d[:, 1] * fy * y / z ** 2)

    # Sigma = R D Rt with D = diag(exp(2*log_scale))
    D = np.exp(2.0 * np.take(p.log_scale, proj.orig_idx, axis=0))
    d_R = 2.0 * np.einsum("nij,njk,nk->nik", d_Sigma, proj.R, D)
    RtSR = np.einsum("nji,njk,nkl->nil", proj.R, d_Sigma, proj.R)
    d_logscale = 2.0 * D * np.einsum("nii->ni", RtSR)

    dRdq = _drot_dquat(proj.qhat)                   # (V,4,3,3)
    d_qhat = np.einsum("nij,nqij->nq", d_R, dRdq)
    proj_q = np.eye(4)[None] - proj.qhat[:, :, None] * proj.qhat[:, None, :]
    d_quat = np.einsum("nqr,nr->nq", proj_q, d_qhat) / proj.qnorm[:, None]

    # color path: c = max(c0 + sum_j m_j a_j e_j, 0)
    live = (proj.color_pre > 0.0)
    dc_pre = d_color * live
    amp = np.take(p.amplitude, proj.orig_idx, axis=0)
    shp = np.take(p.sharpness, proj.orig_idx, axis=0)
    d_diffuse = dc_pre
    d_amp = dc_pre[:, None, :] * (proj.eterm * proj.lmask)[:, :, None]
    ga = np.einsum("nc,nlc->nl", dc_pre, amp) * proj.eterm * proj.lmask
    dot = np.einsum("nlk,nk->nl", proj.mu, proj.vdir)
    d_sharp = ga * (dot - 1.0)
    d_mu = ga[:, :, None] * shp[:, :, None] * proj.vdir[:, None, :]
    proj_mu = (np.eye(3)[None, None]
               - proj.mu[:, :, :, None] * proj.mu[:, :, None, :])
    d_axraw = np.einsum("nlij,nlj->nli", proj_mu, d_mu) / proj.unorm[:, :, None]
    d_v = np.einsum("nl,nl,nlk->nk", ga, shp, proj.mu)
    proj_v = np.eye(3)[None] - proj.vdir[:, :, None] * proj.vdir[:, None, :]
    d_pos_color = np.einsum("nij,nj->ni", proj_v, d_v) / proj.rdist[:, None]

    d_position = d_pcam @ cam.rotation + d_pos_color

    oi = proj.orig_idx
    np.add.at(grads.position, oi, d_position)
    np.add.at(grads.quat, oi, d_quat)
    np.add.at(grads.log_scale, oi, d_logscale)
    np.add.at(grads.opacity, oi, d_opacity)
    np.add.at(grads.diffuse, oi, d_diffuse)
    np.add.at(grads.axis_raw, oi, d_axraw)
    np.add.at(grads.sharpness, oi, d_sharp)
    np.add.at(grads.amplitude, oi, d_amp)
    return grads


# Cache the forward blend for the backward pass up to this many array
# elements per (V, P) buffer; beyond it, chunks are recomputed on the fly.
_CACHE_ELEMENTS = 32_000_000


def loss_and_grads(p: SceneParams, cam: Camera, target: np.ndarray,
                   cfg: LossConfig = LossConfig(),
                   background=(0.0, 0.0, 0.0)) -> tuple[float, GradientSet]:
    """Scalar loss and analytic gradients for one view, params-space."""
    if target.shape != (cam.height, cam.width, 3):
        raise ValueError(f"target shape {target.shape} does not match "
                         f"camera {(cam.height, cam.width, 3)}")
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    proj = _prepare(p, cam)
    if proj is None:
        img = np.broadcast_to(bg, (cam.height, cam.width, 3))
        val, _ = _loss_and_dimg(img, target, cfg)
        return val, GradientSet.zeros_like(p)

    gx, gy = _pixel_centers(cam)
    slices = [slice(lo, min(lo + _PIXEL_CHUNK, gx.size))
              for lo in range(0, gx.size, _PIXEL_CHUNK)]
    cache_ok = proj.orig_idx.size * gx.size <= _CACHE_ELEMENTS

    img = np.empty((gx.size, 3))
    cached: list[_BlendChunk] = []
    for sl in slices:
        blend = _chunk_blend(proj, gx[sl], gy[sl])
        img[sl] = blend.w.T @ proj.color + blend.tbg[:, None] * bg
        if cache_ok:
            cached.append(blend)
    val, dimg = _loss_and_dimg(img.reshape(cam.height, cam.width, 3),
                               target, cfg)

    if cache_ok:
        chunks = zip(slices, cached)
    else:
        chunks = ((sl, _chunk_blend(proj, gx[sl], gy[sl])) for sl in slices)
    return val, _backward_from_blend(p, cam, proj, chunks, dimg, background)


def render_backward(scene: Scene, cam: Camera, target: np.ndarray,
                    cfg: LossConfig = LossConfig(),
                    background=(0.0, 0.0, 0.0)) -> tuple[float, GradientSet]:
    """Loss against a target view plus gradients for every parameter class."""
    return loss_and_grads(SceneParams.from_scene(scene), cam, target,
                          cfg, background)


def psnr(img: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, both images clipped to [0, 1]."""
    a = np.clip(img, 0.0, 1.0)
    b = np.clip(target, 0.0, 1.0)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)
