"""Training objectives with analytic gradients and a finite-difference
self-check harness.

The point loss per valid pixel is

    sigma * ||w ⊙ e||_2  +  sigma * ||∇pred - ∇gt||_2  -  alpha * ln(sigma)

with e = pred - gt, w the focal weight |beta * e|^gamma (or a dynamic /
uniform weight depending on the configuration), reduced by the mean over
valid pixels. The weight w is detached: it scales residuals but
contributes no gradient of its own. All returned gradients are gradients
of the reduced scalar value, so they can be compared directly against
central finite differences of that value.

The offset representation (supervising displacements to the target frame
instead of endpoint coordinates) shares this exact compute path; only the
interpretation of the inputs changes, which is what makes the two
representations equivalent under a common translation of prediction and
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonPositiveSigma, ShapeMismatch
from .rng import SplitMix64, derive_seed

WEIGHT_MODES = ("focal", "dynamic", "none")
REPRESENTATIONS = ("endpoint", "offset")


@dataclass
class LossConfig:
    """Ablation axes and coefficients of the multi-task objective."""

    alpha: float = 0.1            # log-uncertainty coefficient
    beta: float = 1.0             # focal weight scale
    gamma: float = 1.0            # focal weight exponent
    lam: float = 1.0              # point-loss weight in the total loss
    huber_eps: float = 1.0
    weight_mode: str = "focal"
    dynamic_weight: float = 1000.0
    representation: str = "endpoint"
    grad_term: bool = True
    reduction: str = "mean_over_valid"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("alpha, beta, gamma must be non-negative")
        if self.lam <= 0 or self.huber_eps <= 0:
            raise ValueError("lam and huber_eps must be positive")
        if self.dynamic_weight < 1:
            raise ValueError("dynamic_weight must be >= 1")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        if self.reduction != "mean_over_valid":
            raise ValueError("only mean_over_valid reduction is supported")


@dataclass
class LossValue:
    value: float
    grad_points: np.ndarray  # same shape as the prediction
    grad_sigma: np.ndarray   # (H, W)


def spatial_gradient(arr: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Forward differences along u (columns) then v (rows), channel-stacked.

    (H, W, C) -> (H, W, 2C) laid out [du channels, dv channels]; a plain
    (H, W) map is treated as C = 1. Differences in the last column/row and
    differences involving an invalid pixel are zero.
    """
    a = np.asarray(arr)
    a = a.astype(np.result_type(a.dtype, np.float64), copy=False)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[..., None]
    h, w, c = a.shape
    out = np.zeros((h, w, 2 * c), dtype=a.dtype)
    with np.errstate(invalid="ignore"):  # invalid pixels may hold inf/nan
        out[:, :-1, :c] = a[:, 1:, :] - a[:, :-1, :]
        out[:-1, :, c:] = a[1:, :, :] - a[:-1, :, :]
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        du = out[:, :-1, :c]
        du[~(valid[:, :-1] & valid[:, 1:])] = 0.0
        dv = out[:-1, :, c:]
        dv[~(valid[:-1, :] & valid[1:, :])] = 0.0
    return out


def focal_weight(e: np.ndarray, beta: float, gamma: float) -> np.ndarray:
    """Elementwise |beta * e|^gamma, with gamma = 0 meaning uniform weights
    (0^0 := 1)."""
    if beta < 0 or gamma < 0:
        raise ValueError("beta and gamma must be non-negative")
    e = np.asarray(e, dtype=np.float64)
    if gamma == 0:
        return np.ones_like(e)
    return np.abs(beta * e) ** gamma


def _check_positive_sigma(sigma, valid):
    s = sigma[valid]
    if s.size and not np.all(np.isfinite(s) & (s > 0)):
        raise NonPositiveSigma("uncertainty must be positive and finite on valid pixels")


def _promote(a) -> np.ndarray:
    """At least float64, but keep extended precision if the caller passed it.

    The finite-difference harness evaluates losses in longdouble so the
    central difference of a large loss value does not drown a small
    gradient in rounding noise.
    """
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, np.float64), copy=False)


def _grad_term_adjoint(coef: np.ndarray, diff: np.ndarray, n_channels: int) -> np.ndarray:
    """Backpropagate coef[...,None] * diff through the forward differences.

    diff is (H, W, 2C) as produced by spatial_gradient of the prediction;
    the entry at (v, u) adds +1 to pixel (v, u+1) / (v+1, u) and -1 to
    (v, u) per channel.
    """
    g = coef[..., None] * diff
    gu = g[..., :n_channels]
    gv = g[..., n_channels:]
    out = np.zeros(diff.shape[:2] + (n_channels,))
    out -= gu
    out[:, 1:, :] += gu[:, :-1, :]
    out -= gv
    out[1:, :, :] += gv[:-1, :, :]
    return out


def point_loss(pred: np.ndarray, gt: np.ndarray, sigma: np.ndarray,
               valid: np.ndarray, dynamic_mask: np.ndarray | None = None,
               cfg: LossConfig | None = None,
               frozen_weight: np.ndarray | None = None,
               compute_grads: bool = True) -> LossValue:
    """Uncertainty-weighted point-map loss with switchable residual weighting.

    pred/gt are (H, W, 3) maps (endpoint coordinates, or offsets when
    cfg.representation == "offset"); sigma is the (H, W) positive
    uncertainty; dynamic_mask feeds the dynamic weight mode.
    `frozen_weight` overrides the residual weight (used by the
    finite-difference harness, which must hold the detached weight fixed).
    """
    cfg = cfg or LossConfig()
    pred = _promote(pred)
    gt = _promote(gt)
    sigma = _promote(sigma)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3 \
            or sigma.shape != pred.shape[:2] or valid.shape != sigma.shape:
        raise ShapeMismatch("pred/gt (H,W,3), sigma/valid (H,W) required")
    if dynamic_mask is not None and np.asarray(dynamic_mask).shape != valid.shape:
        raise ShapeMismatch("dynamic_mask must match the valid mask")
    _check_positive_sigma(sigma, valid)

    n_valid = int(valid.sum())
    if n_valid == 0:
        return LossValue(0.0, np.zeros_like(pred), np.zeros_like(sigma))

    with np.errstate(invalid="ignore"):
        e = np.where(valid[..., None], pred - gt, 0.0)
    if frozen_weight is not None:
        w = _promote(frozen_weight)
        if w.shape != e.shape:
            raise ShapeMismatch("frozen_weight must match the residual shape")
    elif cfg.weight_mode == "focal":
        w = focal_weight(e, cfg.beta, cfg.gamma)
    elif cfg.weight_mode == "dynamic":
        dm = np.zeros_like(valid) if dynamic_mask is None else np.asarray(dynamic_mask, bool)
        w = np.where(dm, cfg.dynamic_weight, 1.0)[..., None] * np.ones(3)
    else:
        w = np.ones_like(e)

    we = w * e
    n1 = np.sqrt(np.sum(we * we, axis=-1))             # per-pixel weighted norm
    if cfg.grad_term:
        # forward differencing is linear, so one pass over the masked
        # residual equals the difference of the two gradient fields
        diff = spatial_gradient(e, valid)
        n2 = np.sqrt(np.sum(diff * diff, axis=-1))
    else:
        diff = None
        n2 = 0.0

    log_sig = np.where(valid, np.log(np.where(valid, sigma, 1.0)), 0.0)
    per_pixel = sigma * n1 + sigma * n2 - cfg.alpha * log_sig
    value = per_pixel[valid].sum() / n_valid  # numpy scalar, keeps input precision

    if not compute_grads:
        return LossValue(value, None, None)

    scale = 1.0 / n_valid
    safe1 = np.where(n1 > 0, n1, 1.0)
    coef1 = np.where(valid & (n1 > 0), sigma / safe1, 0.0) * scale
    grad_pred = coef1[..., None] * (w * w * e)
    if cfg.grad_term:
        n2a = np.where(np.asarray(n2) > 0, n2, 1.0)
        coef2 = np.where(valid & (np.asarray(n2) > 0), sigma / n2a, 0.0) * scale
        grad_pred = grad_pred + _grad_term_adjoint(coef2, diff, 3)
    n2v = n2 if cfg.grad_term else np.zeros_like(n1)
    grad_sigma = np.where(valid, (n1 + n2v - cfg.alpha / np.where(valid, sigma, 1.0)) * scale, 0.0)
    return LossValue(value, grad_pred, grad_sigma)


def depth_loss(pred: np.ndarray, gt: np.ndarray, sigma: np.ndarray,
               valid: np.ndarray, alpha: float = 0.1,
               compute_grads: bool = True) -> LossValue:
    """Aleatoric-uncertainty depth loss: sigma*|e| + sigma*||∇e||_2 - alpha*ln(sigma),
    mean over valid pixels."""
    pred = _promote(pred)
    gt = _promote(gt)
    sigma = _promote(sigma)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or pred.ndim != 2 or sigma.shape != pred.shape \
            or valid.shape != pred.shape:
        raise ShapeMismatch("pred/gt/sigma/valid must all be (H, W)")
    _check_positive_sigma(sigma, valid)

    n_valid = int(valid.sum())
    if n_valid == 0:
        return LossValue(0.0, np.zeros_like(pred), np.zeros_like(sigma))

    with np.errstate(invalid="ignore"):
        e = np.where(valid, pred - gt, 0.0)
    diff = spatial_gradient(e, valid)                  # (H, W, 2)
    n2 = np.sqrt(np.sum(diff * diff, axis=-1))
    log_sig = np.where(valid, np.log(np.where(valid, sigma, 1.0)), 0.0)
    per_pixel = sigma * np.abs(e) + sigma * n2 - alpha * log_sig
    value = per_pixel[valid].sum() / n_valid

    if not compute_grads:
        return LossValue(value, None, None)

    scale = 1.0 / n_valid
    grad_pred = np.where(valid, sigma * np.sign(e), 0.0) * scale
    n2a = np.where(n2 > 0, n2, 1.0)
    coef2 = np.where(valid & (n2 > 0), sigma / n2a, 0.0) * scale
    grad_pred = grad_pred + _grad_term_adjoint(coef2, diff, 1)[..., 0]
    grad_sigma = np.where(valid, (np.abs(e) + n2 - alpha / np.where(valid, sigma, 1.0)) * scale, 0.0)
    return LossValue(value, grad_pred, grad_sigma)


def camera_loss(pred_g: np.ndarray, gt_g: np.ndarray, huber_eps: float = 1.0):
    """Per-component Huber loss between camera vectors, summed over
    components and frames -> (value, grad wrt pred)."""
    if huber_eps <= 0:
        raise ValueError("huber_eps must be positive")
    pred_g = _promote(pred_g)
    gt_g = _promote(gt_g)
    if pred_g.shape != gt_g.shape:
        raise ShapeMismatch("camera vectors must have matching shapes")
    r = pred_g - gt_g
    small = np.abs(r) <= huber_eps
    per = np.where(small, 0.5 * r * r, huber_eps * (np.abs(r) - 0.5 * huber_eps))
    grad = np.where(small, r, huber_eps * np.sign(r))
    return per.sum(), grad


def total_loss(point_value: float, camera_value: float, depth_value: float,
               lam: float = 1.0) -> float:
    """Multi-task combination: lam * point + camera + depth."""
    return lam * point_value + camera_value + depth_value


# ---------------------------------------------------------------------------
# finite-difference verification

def relative_gradient_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def finite_diff_check(value_fn, arrays: dict, grads: dict, h: float = 1e-5) -> float:
    """Max relative error between central differences of value_fn and the
    supplied analytic gradients.

    value_fn(arrays) must return the scalar loss for the given dict of
    arrays; every coordinate of every array named in `grads` is perturbed
    by ±h. Whatever should be held fixed during perturbation (e.g. the
    detached focal weight) must be baked into value_fn.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError("h must lie in [1e-7, 1e-3]")
    worst = 0.0
    # extended precision keeps the difference of two near-equal loss values
    # meaningful even when the loss is large and the gradient small
    work = {k: np.array(v, dtype=np.longdouble) for k, v in arrays.items()}
    h = np.longdouble(h)
    for name, g in grads.items():
        arr = work[name]
        flat = arr.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_fn(work)
            flat[i] = orig - h
            down = value_fn(work)
            flat[i] = orig
            numeric = float((up - down) / (2.0 * h))
            worst = max(worst, relative_gradient_error(float(gflat[i]), numeric))
    return worst


def _uniform_array(rng: SplitMix64, shape, lo: float, hi: float) -> np.ndarray:
    n = int(np.prod(shape))
    return (lo + (hi - lo) * np.array([rng.uniform() for _ in range(n)])).reshape(shape)


def _signed_residual(rng: SplitMix64, shape) -> np.ndarray:
    """Residual channels with magnitude in [0.1, 1] and random sign.

    The point and depth losses are non-differentiable where a residual
    norm vanishes; keeping every channel away from zero keeps the central
    difference interval inside the smooth region, where the comparison is
    meaningful.
    """
    mag = _uniform_array(rng, shape, 0.1, 1.0)
    sign = np.where(_uniform_array(rng, shape, 0.0, 1.0) < 0.5, -1.0, 1.0)
    return mag * sign


def _random_point_instance(rng: SplitMix64, h: int = 8, w: int = 8):
    gt = _uniform_array(rng, (h, w, 3), -1.0, 1.0)
    pred = gt + _signed_residual(rng, (h, w, 3))
    sigma = _uniform_array(rng, (h, w), 0.3, 2.0)
    valid = _uniform_array(rng, (h, w), 0.0, 1.0) > 0.15
    dyn = _uniform_array(rng, (h, w), 0.0, 1.0) > 0.5
    return pred, gt, sigma, valid, dyn


def check_point_loss_gradients(cfg: LossConfig, seed: int, trials: int = 100,
                               h: float = 1e-5, size: int = 8) -> float:
    """Max relative FD error of point_loss gradients over random instances."""
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(trials):
        pred, gt, sigma, valid, dyn = _random_point_instance(rng, size, size)
        center = point_loss(pred, gt, sigma, valid, dyn, cfg)
        # freeze the detached weight at the center point
        e = np.where(valid[..., None], pred - gt, 0.0)
        if cfg.weight_mode == "focal":
            w0 = focal_weight(e, cfg.beta, cfg.gamma)
        elif cfg.weight_mode == "dynamic":
            w0 = np.where(dyn, cfg.dynamic_weight, 1.0)[..., None] * np.ones(3)
        else:
            w0 = np.ones_like(e)

        def value_fn(arrs):
            return point_loss(arrs["pred"], gt, arrs["sigma"], valid, dyn, cfg,
                              frozen_weight=w0, compute_grads=False).value

        err = finite_diff_check(value_fn, {"pred": pred, "sigma": sigma},
                                {"pred": center.grad_points, "sigma": center.grad_sigma}, h)
        worst = max(worst, err)
    return worst


def check_depth_loss_gradients(seed: int, alpha: float = 0.1, trials: int = 100,
                               h: float = 1e-5, size: int = 8) -> float:
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(trials):
        gt = _uniform_array(rng, (size, size), 0.5, 3.0)
        pred = gt + _signed_residual(rng, (size, size))
        sigma = _uniform_array(rng, (size, size), 0.3, 2.0)
        valid = _uniform_array(rng, (size, size), 0.0, 1.0) > 0.15
        center = depth_loss(pred, gt, sigma, valid, alpha)

        def value_fn(arrs):
            return depth_loss(arrs["pred"], gt, arrs["sigma"], valid, alpha,
                              compute_grads=False).value

        err = finite_diff_check(value_fn, {"pred": pred, "sigma": sigma},
                                {"pred": center.grad_points, "sigma": center.grad_sigma}, h)
        worst = max(worst, err)
    return worst


def check_camera_loss_gradients(seed: int, huber_eps: float = 1.0,
                                trials: int = 100, h: float = 1e-5) -> float:
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(trials):
        pred = _uniform_array(rng, (9,), -2.0, 2.0)
        gt = _uniform_array(rng, (9,), -2.0, 2.0)
        _, grad = camera_loss(pred, gt, huber_eps)

        def value_fn(arrs):
            return camera_loss(arrs["pred"], gt, huber_eps)[0]

        err = finite_diff_check(value_fn, {"pred": pred}, {"pred": grad}, h)
        worst = max(worst, err)
    return worst


def gradient_check_suite(seed: int, trials: int = 100, h: float = 1e-5,
                         cfg: LossConfig | None = None) -> dict[str, float]:
    """All five gradient checks; returns max relative error per loss."""
    cfg = cfg or LossConfig()
    return {
        "point_focal": check_point_loss_gradients(
            replace(cfg, weight_mode="focal"), derive_seed(seed, 1), trials, h),
        "point_dynamic": check_point_loss_gradients(
            replace(cfg, weight_mode="dynamic"), derive_seed(seed, 2), trials, h),
        "point_offset": check_point_loss_gradients(
            replace(cfg, representation="offset"), derive_seed(seed, 3), trials, h),
        "depth": check_depth_loss_gradients(derive_seed(seed, 4), cfg.alpha, trials, h),
        "camera": check_camera_loss_gradients(derive_seed(seed, 5), cfg.huber_eps, trials, h),
    }
