"""Depth estimation from a single structured-light defocus image.

Three estimators share one output contract (depth plus per-pixel log
variance):

* ``dog_segment`` / ``dog_depth`` — difference-of-Gaussians response tuned to
  the spot footprint at a target depth; cheap foreground/background
  segmentation.
* ``tm_depth`` — brute-force template matching: each grid cell is phase-
  correlated against the co-located crop of every calibration plane and takes
  the best-scoring plane.
* ``PatchModel`` — a toy trainable head over per-plane correlation features,
  optimized with Adam under the heteroscedastic Huber loss

      L = Huber_d(z, z_gt) * exp(-log s^2) + 0.5 * log s^2

  (mean-reduced over pixels; gradients are analytic and checked against
  finite differences in the tests).
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import (
    binary_closing,
    binary_opening,
    gaussian_filter,
    generate_binary_structure,
    maximum_filter,
)

from .calibration import CalibrationSet, PsfBank
from .imagery import BinaryMask, DepthMap, GrayImage
from .optics import OpticalConfig, blur_diameter_px


class EstimationError(RuntimeError):
    pass


class TrainingDivergedError(EstimationError):
    pass


@dataclass(frozen=True)
class DepthEstimate:
    """Predicted depth plus per-pixel log-variance (confidence)."""

    depth: DepthMap
    log_variance: np.ndarray

    def __post_init__(self):
        lv = np.ascontiguousarray(np.asarray(self.log_variance, dtype=np.float64))
        if lv.shape != self.depth.shape:
            raise ValueError("log_variance dimensions differ from depth")
        if not np.all(np.isfinite(lv)):
            raise ValueError("log_variance must be finite")
        lv.flags.writeable = False
        object.__setattr__(self, "log_variance", lv)


# ---------------------------------------------------------------------------
# loss


def huber(residual, delta: float):
    """Huber penalty: quadratic inside |r| <= delta, linear outside."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = np.asarray(residual, dtype=np.float64)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return float(out) if np.isscalar(residual) else out


def huber_grad(residual, delta: float):
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = np.asarray(residual, dtype=np.float64)
    out = np.where(np.abs(r) <= delta, r, delta * np.sign(r))
    return float(out) if np.isscalar(residual) else out


def _hetero_loss_raw(z, logvar, gt, delta: float) -> float:
    h = huber(z - gt, delta)
    return float(np.mean(h * np.exp(-logvar) + 0.5 * logvar))


def hetero_loss(pred: DepthEstimate, gt: DepthMap, delta: float) -> float:
    """Heteroscedastic Huber loss, mean-reduced over pixels."""
    if pred.depth.shape != gt.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    return _hetero_loss_raw(pred.depth.data, pred.log_variance, gt.data, delta)


def hetero_loss_grad(
    pred: DepthEstimate, gt: DepthMap, delta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of hetero_loss w.r.t. depth and log-variance."""
    if pred.depth.shape != gt.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    r = pred.depth.data - gt.data
    ev = np.exp(-pred.log_variance)
    n = r.size
    d_depth = huber_grad(r, delta) * ev / n
    d_logvar = (-huber(r, delta) * ev + 0.5) / n
    return d_depth, d_logvar


# ---------------------------------------------------------------------------
# correlation features


@dataclass(frozen=True)
class FeatureSpec:
    patch_size: int = 33
    zero_mean: bool = True
    unit_norm: bool = True

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")


def _embed_center(kernel: np.ndarray, size: int) -> np.ndarray:
    """Zero-pad (or center-crop) a kernel to size x size."""
    out = np.zeros((size, size))
    kh, kw = kernel.shape
    if kh > size:
        o = (kh - size) // 2
        kernel = kernel[o : o + size, o : o + size]
        kh, kw = kernel.shape
    oy, ox = (size - kh) // 2, (size - kw) // 2
    out[oy : oy + kh, ox : ox + kw] = kernel
    return out


def _template_matrix(bank: PsfBank, spec: FeatureSpec) -> np.ndarray:
    rows = []
    for k in bank.kernels:
        t = _embed_center(k.data, spec.patch_size).ravel()
        if spec.zero_mean:
            t = t - t.mean()
        n = np.linalg.norm(t)
        rows.append(t / n if (spec.unit_norm and n > 1e-12) else t)
    return np.asarray(rows)


def _gather_patches(
    image: np.ndarray, centers: np.ndarray, size: int
) -> np.ndarray:
    """Stack size x size patches at integer centers, windows clamped in-bounds."""
    h, w = image.shape
    half = size // 2
    cx = np.clip(np.round(centers[:, 0]).astype(int), half, w - 1 - half)
    cy = np.clip(np.round(centers[:, 1]).astype(int), half, h - 1 - half)
    out = np.empty((len(centers), size * size))
    for i, (x, y) in enumerate(zip(cx, cy)):
        out[i] = image[y - half : y + half + 1, x - half : x + half + 1].ravel()
    return out


def extract_features_batch(
    image: GrayImage, bank: PsfBank, centers: np.ndarray, spec: FeatureSpec
) -> np.ndarray:
    """Normalized cross-correlation of each patch against every plane kernel."""
    templates = _template_matrix(bank, spec)
    patches = _gather_patches(image.data, np.atleast_2d(centers), spec.patch_size)
    if spec.zero_mean:
        patches = patches - patches.mean(axis=1, keepdims=True)
    if spec.unit_norm:
        norms = np.linalg.norm(patches, axis=1, keepdims=True)
        safe = np.where(norms > 1e-12, norms, 1.0)
        patches = np.where(norms > 1e-12, patches / safe, 0.0)
    return patches @ templates.T


def extract_features(
    image: GrayImage, bank: PsfBank, patch_center, patch_size: int = 33
) -> np.ndarray:
    """Feature vector (one NCC score per plane) for a single patch."""
    spec = FeatureSpec(patch_size=patch_size)
    return extract_features_batch(
        image, bank, np.asarray([patch_center], dtype=np.float64), spec
    )[0]


def spot_bank(calib: CalibrationSet, patch_size: int = 33) -> PsfBank:
    """Empirical per-plane dot templates averaged from the calibration images.

    These are the observed spot appearances (projected spot convolved with
    that plane's PSF), which is what image patches actually look like.
    """
    dims = calib.images[0].shape
    centers = calib.pattern.pixel_positions(dims[1], dims[0])
    half = patch_size // 2
    inside = (
        (centers[:, 0] >= half)
        & (centers[:, 0] < dims[1] - half)
        & (centers[:, 1] >= half)
        & (centers[:, 1] < dims[0] - half)
    )
    centers = centers[inside]
    if len(centers) == 0:
        raise EstimationError("no calibration dots clear of the patch margin")
    kernels = []
    for img in calib.images:
        patches = _gather_patches(img.data, centers, patch_size)
        mean_patch = patches.mean(axis=0).reshape(patch_size, patch_size)
        total = mean_patch.sum()
        if total <= 0:
            raise EstimationError("calibration image has no spot energy")
        kernels.append(GrayImage(mean_patch / total))
    return PsfBank(planes=calib.planes, kernels=tuple(kernels))


# ---------------------------------------------------------------------------
# dot localization (shared infrastructure)


def detect_dots(
    image: GrayImage, sigma: float = 1.0, threshold_rel: float = 0.15
) -> np.ndarray:
    """Local maxima of a fine-scale DoG response; returns (n, 2) (x, y)."""
    resp = gaussian_filter(image.data, sigma) - gaussian_filter(image.data, 1.6 * sigma)
    peak = resp.max()
    if peak <= 0:
        return np.empty((0, 2))
    local_max = resp == maximum_filter(resp, size=3)
    ys, xs = np.nonzero(local_max & (resp > threshold_rel * peak))
    return np.stack([xs, ys], axis=1).astype(np.float64)


# ---------------------------------------------------------------------------
# DoG segmentation


def dog_segment(
    image: GrayImage, cfg: OpticalConfig, z_target: float, threshold: float
) -> tuple[BinaryMask, np.ndarray]:
    """Fine/coarse Gaussian difference tuned to the spot footprint at z_target.

    High response means spot energy concentrated at that footprint, i.e. an
    object near z_target.  The mask is the thresholded, opening-cleaned
    response.
    """
    footprint = max(2.0, blur_diameter_px(cfg, z_target))
    sigma1 = 0.5 * footprint
    sigma2 = 1.6 * sigma1
    resp = gaussian_filter(image.data, sigma1) - gaussian_filter(image.data, sigma2)
    mask = resp > threshold
    mask = binary_opening(mask, structure=generate_binary_structure(2, 1))
    return BinaryMask(mask), resp


def dog_depth(
    image: GrayImage,
    cfg: OpticalConfig,
    z_fg: float,
    z_bg: float,
    threshold: float,
    region_radius_px: int = 12,
) -> DepthEstimate:
    """Binary DoG segmentation promoted to a two-valued depth map.

    Known foreground/background depths are assigned to the segmented regions
    (the classical estimators only separate the two).
    """
    mask, _ = dog_segment(image, cfg, z_fg, threshold)
    st = generate_binary_structure(2, 1)
    region = binary_closing(
        mask.data, structure=st, iterations=region_radius_px, border_value=0
    )
    depth = np.where(region, z_fg, z_bg)
    return DepthEstimate(depth=DepthMap(depth), log_variance=np.zeros(depth.shape))


# ---------------------------------------------------------------------------
# phase correlation and template matching


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def phase_correlate(
    patch_a: np.ndarray, patch_b: np.ndarray
) -> tuple[tuple[int, int], float]:
    """Translation between equal power-of-two patches via the normalized
    cross-power spectrum.

    Returns ((dy, dx), peak) such that patch_b ~= roll(patch_a, (dy, dx));
    integer circular shifts are recovered exactly and peak is ~1 for an exact
    broadband match.
    """
    a = np.asarray(patch_a, dtype=np.float64)
    b = np.asarray(patch_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or not (_is_pow2(a.shape[0]) and _is_pow2(a.shape[1])):
        raise ValueError(f"patches must be 2-D with power-of-two sides, got {a.shape}")
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    cross = np.conj(fa) * fb
    mag = np.abs(cross)
    r = np.fft.ifft2(cross / (mag + 1e-9 * mag.max() + 1e-300)).real
    idx = np.unravel_index(np.argmax(r), r.shape)
    peak = float(r[idx])
    dy, dx = int(idx[0]), int(idx[1])
    if dy > a.shape[0] // 2:
        dy -= a.shape[0]
    if dx > a.shape[1] // 2:
        dx -= a.shape[1]
    return (dy, dx), peak


@dataclass(frozen=True)
class TmGridSpec:
    cell: int = 64
    min_peak: float = 0.05
    eps: float = 1e-6

    def __post_init__(self):
        if not _is_pow2(self.cell):
            raise ValueError("cell side must be a power of two")
        if not 0.0 <= self.min_peak < 1.0:
            raise ValueError("min_peak must be in [0, 1)")


def _cell_ranges(extent: int, cell: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + cell, extent)) for lo in range(0, extent, cell)]


def _pad_cell(block: np.ndarray, cell: int) -> np.ndarray:
    if block.shape == (cell, cell):
        return block
    out = np.zeros((cell, cell))
    out[: block.shape[0], : block.shape[1]] = block
    return out


class TmDepthEstimator:
    """Brute-force calibration-bank matcher with precomputed crop spectra.

    Each grid cell scores every calibration plane by phase correlation and
    reports the best plane; cells with no credible match (peak below
    min_peak) are assigned the farthest plane, i.e. nothing detected within
    the calibrated range.  Confidence maps to log-variance as -log(peak^2+eps).
    """

    def __init__(self, calib: CalibrationSet, grid: TmGridSpec = TmGridSpec()):
        self.calib = calib
        self.grid = grid
        dims = calib.images[0].shape
        self.rows = _cell_ranges(dims[0], grid.cell)
        self.cols = _cell_ranges(dims[1], grid.cell)
        self.planes = np.asarray(calib.planes)
        # conj FFT of every (cell, plane) calibration crop
        self._ref = np.empty(
            (len(self.rows), len(self.cols), len(calib.planes), grid.cell, grid.cell),
            dtype=np.complex128,
        )
        for ri, (y0, y1) in enumerate(self.rows):
            for ci, (x0, x1) in enumerate(self.cols):
                for pi, img in enumerate(calib.images):
                    crop = _pad_cell(img.data[y0:y1, x0:x1], grid.cell)
                    self._ref[ri, ci, pi] = np.conj(np.fft.fft2(crop))

    def __call__(self, image: GrayImage) -> DepthEstimate:
        dims = self.calib.images[0].shape
        if image.shape != dims:
            raise ValueError(f"image is {image.shape}, calibration is {dims}")
        depth = np.empty(dims)
        logvar = np.empty(dims)
        far = self.planes[-1]
        for ri, (y0, y1) in enumerate(self.rows):
            for ci, (x0, x1) in enumerate(self.cols):
                patch = _pad_cell(image.data[y0:y1, x0:x1], self.grid.cell)
                fp = np.fft.fft2(patch)
                cross = self._ref[ri, ci] * fp[None, :, :]
                mag = np.abs(cross)
                scale = mag.max(axis=(1, 2), keepdims=True)
                r = np.fft.ifft2(cross / (mag + 1e-9 * scale + 1e-300), axes=(1, 2))
                peaks = r.real.max(axis=(1, 2))
                best = int(np.argmax(peaks))
                peak = float(peaks[best])
                z = self.planes[best] if peak >= self.grid.min_peak else far
                depth[y0:y1, x0:x1] = z
                logvar[y0:y1, x0:x1] = -math.log(peak * peak + self.grid.eps)
        return DepthEstimate(depth=DepthMap(depth), log_variance=logvar)


def tm_depth(
    image: GrayImage, calib: CalibrationSet, grid: TmGridSpec = TmGridSpec()
) -> DepthEstimate:
    return TmDepthEstimator(calib, grid)(image)


# ---------------------------------------------------------------------------
# trainable patch estimator


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    decay_factor: float = 0.5
    decay_every: int = 10
    huber_delta: float = 0.25  # one plane step
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patch_size: int = 33
    dots_per_pair: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("learning_rate", "batch_size", "decay_factor", "decay_every",
                     "huber_delta", "beta1", "beta2", "adam_eps", "dots_per_pair"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


@dataclass(frozen=True)
class PatchModel:
    planes: tuple[float, ...]
    weights: np.ndarray  # (P, P+1): per-plane scores over [features, bias]
    variance_head: np.ndarray  # (P+1,): log-variance over [features, bias]
    feature_spec: FeatureSpec
    templates: PsfBank  # feature templates, embedded so inference is self-contained

    def __post_init__(self):
        p = len(self.planes)
        w = np.asarray(self.weights, dtype=np.float64)
        u = np.asarray(self.variance_head, dtype=np.float64)
        if w.shape != (p, p + 1):
            raise ValueError(f"weights must be ({p}, {p + 1}), got {w.shape}")
        if u.shape != (p + 1,):
            raise ValueError(f"variance_head must be ({p + 1},), got {u.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variance_head", u)

    def forward(self, features: np.ndarray):
        """(depth, logvar, probs) for a (n, P) feature batch."""
        x = np.hstack([features, np.ones((features.shape[0], 1))])
        scores = x @ self.weights.T
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=1, keepdims=True)
        depth = probs @ np.asarray(self.planes)
        logvar = x @ self.variance_head
        return depth, logvar, probs


def adam_step(params, grads, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update; arrays updated functionally."""
    out_p, out_m, out_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * g * g
        m_hat = mi / (1.0 - beta1**t)
        v_hat = vi / (1.0 - beta2**t)
        out_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        out_m.append(mi)
        out_v.append(vi)
    return out_p, out_m, out_v


def _batch_loss_and_grads(model: PatchModel, feats, gts, delta):
    x = np.hstack([feats, np.ones((feats.shape[0], 1))])
    scores = x @ model.weights.T
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=1, keepdims=True)
    planes = np.asarray(model.planes)
    z = probs @ planes
    v = x @ model.variance_head
    r = z - gts
    h = huber(r, delta)
    ev = np.exp(-v)
    loss = float(np.mean(h * ev + 0.5 * v))
    n = feats.shape[0]
    dz = huber_grad(r, delta) * ev / n  # (n,)
    dv = (-h * ev + 0.5) / n  # (n,)
    # depth head: dz/dscore_k = p_k (z_k - z)
    dscore = probs * (planes[None, :] - z[:, None]) * dz[:, None]
    grad_w = dscore.T @ x
    grad_u = dv @ x
    return loss, grad_w, grad_u


@dataclass
class TrainResult:
    model: PatchModel
    trace: np.ndarray  # rows of (epoch, step, loss, lr)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "loss", "lr"])
            for epoch, step, loss, lr in self.trace:
                writer.writerow([int(epoch), int(step), repr(loss), repr(lr)])


def collect_training_samples(dataset, calib: CalibrationSet, cfg: TrainConfig):
    """Correlation features and depth labels at dot locations across pairs."""
    bank = spot_bank(calib, cfg.patch_size)
    spec = FeatureSpec(patch_size=cfg.patch_size)
    dims = calib.images[0].shape
    centers = calib.pattern.pixel_positions(dims[1], dims[0])
    half = cfg.patch_size // 2
    inside = (
        (centers[:, 0] >= half)
        & (centers[:, 0] < dims[1] - half)
        & (centers[:, 1] >= half)
        & (centers[:, 1] < dims[0] - half)
    )
    centers = centers[inside]
    rng = np.random.default_rng((cfg.seed, 0x5A))
    feats, gts = [], []
    for pair in dataset:
        sel = centers
        if len(centers) > cfg.dots_per_pair:
            pick = rng.choice(len(centers), size=cfg.dots_per_pair, replace=False)
            sel = centers[pick]
        f = extract_features_batch(pair.image, bank, sel, spec)
        ix = np.round(sel[:, 0]).astype(int)
        iy = np.round(sel[:, 1]).astype(int)
        feats.append(f)
        gts.append(pair.depth.data[iy, ix])
    if not feats:
        raise ValueError("empty training dataset")
    return np.vstack(feats), np.concatenate(gts), bank


def train_patch_model(dataset, calib: CalibrationSet, cfg: TrainConfig) -> TrainResult:
    """Adam over the toy patch head with the configured step schedule.

    ``dataset`` is an iterable of TrainingPair; samples are taken at dot
    locations (up to cfg.dots_per_pair per pair).
    """
    feats, gts, bank = collect_training_samples(dataset, calib, cfg)
    p = len(calib.planes)
    model = PatchModel(
        planes=calib.planes,
        weights=np.zeros((p, p + 1)),
        variance_head=np.zeros(p + 1),
        feature_spec=FeatureSpec(patch_size=cfg.patch_size),
        templates=bank,
    )
    rng = np.random.default_rng((cfg.seed, 0xAD))
    n = feats.shape[0]
    steps_per_epoch = max(1, n // cfg.batch_size)
    trace = np.empty((cfg.epochs * steps_per_epoch, 4))
    params = [model.weights, model.variance_head]
    m = [np.zeros_like(q) for q in params]
    v = [np.zeros_like(q) for q in params]
    t = 0
    row = 0
    first_epoch_loss = None
    last_epoch_loss = None
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        epoch_losses = []
        for step in range(steps_per_epoch):
            batch = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            loss, gw, gu = _batch_loss_and_grads(
                model, feats[batch], gts[batch], cfg.huber_delta
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch} step {step}; "
                    f"trace so far has {row} rows"
                )
            t += 1
            params, m, v = adam_step(
                params, [gw, gu], m, v, t, lr, cfg.beta1, cfg.beta2, cfg.adam_eps
            )
            model = replace(model, weights=params[0], variance_head=params[1])
            trace[row] = (epoch, step, loss, lr)
            row += 1
            epoch_losses.append(loss)
        mean_loss = float(np.mean(epoch_losses))
        if first_epoch_loss is None:
            first_epoch_loss = mean_loss
        last_epoch_loss = mean_loss
    if last_epoch_loss is not None and last_epoch_loss >= first_epoch_loss:
        warnings.warn(
            f"training did not improve: {first_epoch_loss:.6g} -> {last_epoch_loss:.6g}"
        )
    return TrainResult(model=model, trace=trace[:row])


def infer_patch_model(
    model: PatchModel, image: GrayImage, dot_locations: np.ndarray
) -> DepthEstimate:
    """Per-dot depth/variance from the trained head, densified by nearest dot."""
    dots = np.atleast_2d(np.asarray(dot_locations, dtype=np.float64))
    if dots.size == 0:
        raise EstimationError("no structured light detected")
    feats = extract_features_batch(image, model.templates, dots, model.feature_spec)
    depth_dots, logvar_dots, _ = model.forward(feats)
    h, w = image.shape
    from scipy.spatial import cKDTree

    tree = cKDTree(dots)
    ys, xs = np.mgrid[0:h, 0:w]
    _, nearest = tree.query(np.stack([xs.ravel(), ys.ravel()], axis=1))
    depth = depth_dots[nearest].reshape(h, w)
    logvar = logvar_dots[nearest].reshape(h, w)
    return DepthEstimate(depth=DepthMap(depth), log_variance=logvar)


# ---------------------------------------------------------------------------
# model persistence (magic ASTR1, little-endian float32 arrays)

_MAGIC = b"ASTR1"


def save_patch_model(model: PatchModel, path) -> None:
    p = len(model.planes)
    side = model.templates.kernels[0].data.shape[0]
    parts = [
        _MAGIC,
        struct.pack("<I", p),
        np.asarray(model.planes, dtype="<f4").tobytes(),
        struct.pack(
            "<IB",
            model.feature_spec.patch_size,
            (model.feature_spec.zero_mean << 0) | (model.feature_spec.unit_norm << 1),
        ),
        model.weights.astype("<f4").tobytes(),
        model.variance_head.astype("<f4").tobytes(),
        struct.pack("<I", side),
    ]
    for k in model.templates.kernels:
        parts.append(k.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_patch_model(path) -> PatchModel:
    buf = Path(path).read_bytes()
    if buf[:5] != _MAGIC:
        raise EstimationError(f"bad model magic {buf[:5]!r}")
    off = 5
    (p,) = struct.unpack_from("<I", buf, off)
    off += 4
    planes = np.frombuffer(buf, dtype="<f4", count=p, offset=off).astype(np.float64)
    off += 4 * p
    patch_size, flags = struct.unpack_from("<IB", buf, off)
    off += 5
    w = np.frombuffer(buf, dtype="<f4", count=p * (p + 1), offset=off)
    off += 4 * p * (p + 1)
    u = np.frombuffer(buf, dtype="<f4", count=p + 1, offset=off)
    off += 4 * (p + 1)
    (side,) = struct.unpack_from("<I", buf, off)
    off += 4
    kernels = []
    for _ in range(p):
        k = np.frombuffer(buf, dtype="<f4", count=side * side, offset=off)
        off += 4 * side * side
        arr = k.astype(np.float64).reshape(side, side)
        kernels.append(GrayImage(arr / arr.sum()))  # re-normalize f32 rounding
    spec = FeatureSpec(
        patch_size=patch_size, zero_mean=bool(flags & 1), unit_norm=bool(flags & 2)
    )
    return PatchModel(
        planes=tuple(planes),
        weights=w.astype(np.float64).reshape(p, p + 1),
        variance_head=u.astype(np.float64),
        feature_spec=spec,
        templates=PsfBank(planes=tuple(planes), kernels=tuple(kernels)),
    )
