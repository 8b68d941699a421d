"""Stochastic training-time augmentation and the deterministic validation path.

The preprocessed [0,1) window is quantized once to 8-bit (round half to
even), after which the chain operates on float values in the 0..255 domain
(HWC layout) so no further quantization error accumulates: random resized
crop to the output size, horizontal flip, rotation within +/-20 degrees,
and color jitter. ``to_float`` then restores channel-first [0,1] tensors;
the conv-backbone path additionally standardizes with the fixed ImageNet
channel statistics, the transformer path does not.

All resampling is bilinear: resizes clamp at the frame edge, rotations
fill from zero outside the frame. Mixup operates on whole batches with a
single Beta-distributed coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .preprocess import ChannelStats, PreprocConfig, preprocess_window

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.8, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 1.33)
    out_size: int = 224
    flip_prob: float = 0.5
    max_rotation_deg: float = 20.0
    jitter_bcs: float = 0.2
    jitter_hue: float = 0.1
    mixup_alpha: float = 0.2
    imagenet_normalize: bool = False
    color_jitter: bool = True

    def __post_init__(self):
        if not 0.0 < self.crop_scale[0] <= self.crop_scale[1] <= 1.0:
            raise ValueError(f"bad crop scale range {self.crop_scale}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip probability out of range: {self.flip_prob}")
        if self.mixup_alpha <= 0.0:
            raise ValueError("mixup alpha must be positive")


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[3,H,W] float in [0,1] -> [H,W,3] uint8, round half to even."""
    hwc = np.transpose(image, (1, 2, 0))
    return np.clip(np.rint(hwc * 255.0), 0, 255).astype(np.uint8)


def to_float(image: np.ndarray) -> np.ndarray:
    """[H,W,3] values in 0..255 -> channel-first float32 in [0,1]."""
    chw = np.transpose(np.asarray(image, dtype=np.float32) / 255.0, (2, 0, 1))
    return np.ascontiguousarray(chw)


def imagenet_normalize(image: np.ndarray) -> np.ndarray:
    """Channel-first standardization with the fixed ImageNet statistics."""
    return ((image - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]).astype(np.float32)


def imagenet_denormalize(image: np.ndarray) -> np.ndarray:
    return (image * IMAGENET_STD[:, None, None] + IMAGENET_MEAN[:, None, None]).astype(np.float32)


def _sample_grid(image: np.ndarray, src_y: np.ndarray, src_x: np.ndarray,
                 zero_fill: bool) -> np.ndarray:
    """Bilinear lookup of HWC float image at fractional source coordinates."""
    h, w = image.shape[:2]
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = (src_y - y0)[..., None]
    fx = (src_x - x0)[..., None]

    def tap(yy, xx):
        if zero_fill:
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            return np.where(valid[..., None], vals, 0.0)
        return image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]

    top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def _resize_hwc(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers, clamped at the edges."""
    h, w = image.shape[:2]
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _sample_grid(image.astype(np.float64), grid_y, grid_x, zero_fill=False)


def bilinear_resize_chw(image: np.ndarray, out_size: int) -> np.ndarray:
    """Channel-first wrapper around the shared bilinear resize."""
    hwc = np.transpose(image, (1, 2, 0))
    out = _resize_hwc(hwc, out_size, out_size)
    return np.ascontiguousarray(np.transpose(out, (2, 0, 1)), dtype=np.float32)


def sample_crop_rect(h: int, w: int, config: AugmentConfig,
                     rng: np.random.Generator) -> tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w): up to 10 attempts at the requested area
    fraction and log-uniform aspect ratio, then a centered fallback with the
    aspect clamped into range."""
    lo, hi = config.crop_scale
    rlo, rhi = config.crop_ratio
    for _ in range(10):
        area = h * w * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(math.log(rlo), math.log(rhi)))
        cw = int(round(math.sqrt(area * ratio)))
        ch = int(round(math.sqrt(area / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    in_ratio = w / h
    if in_ratio < rlo:
        cw, ch = w, int(round(w / rlo))
    elif in_ratio > rhi:
        ch, cw = h, int(round(h * rhi))
    else:
        ch, cw = h, w
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def random_resized_crop(image: np.ndarray, config: AugmentConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """Crop a random region and resize it to out_size x out_size (bilinear)."""
    img = np.asarray(image, dtype=np.float64)
    top, left, ch, cw = sample_crop_rect(img.shape[0], img.shape[1], config, rng)
    crop = img[top:top + ch, left:left + cw]
    return _resize_hwc(crop, config.out_size, config.out_size)


def random_hflip(image: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Reverse column order with probability ``p``."""
    if rng.random() < p:
        return np.ascontiguousarray(image[:, ::-1])
    return np.asarray(image)


def random_rotate(image: np.ndarray, max_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate about the image center by theta ~ U(-max_deg, +max_deg);
    bilinear sampling, zero fill outside the source frame."""
    theta = math.radians(rng.uniform(-max_deg, max_deg))
    return rotate_by(image, theta)


def rotate_by(image: np.ndarray, theta: float) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_y = cy + ys * cos_t - xs * sin_t
    src_x = cx + ys * sin_t + xs * cos_t
    return _sample_grid(img, src_y, src_x, zero_fill=True)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    h = np.zeros_like(mx)
    safe = delta > 0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        rc = np.where(safe, (mx - r) / delta, 0.0)
        gc = np.where(safe, (mx - g) / delta, 0.0)
        bc = np.where(safe, (mx - b) / delta, 0.0)
    h = np.where(mx == r, bc - gc, h)
    h = np.where(mx == g, 2.0 + rc - bc, h)
    h = np.where(mx == b, 4.0 + gc - rc, h)
    h = np.where(safe, (h / 6.0) % 1.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = np.stack([
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ], axis=0)
    return np.take_along_axis(choices, i[None, ..., None], axis=0)[0]


def color_jitter(image: np.ndarray, config: AugmentConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Brightness/contrast/saturation factors in 1 +/- jitter_bcs and a hue
    rotation up to jitter_hue turns, applied in a random order; each stage
    clamps back into 0..255."""
    img = np.asarray(image, dtype=np.float64)
    j = config.jitter_bcs

    def brightness(x):
        return x * rng.uniform(1.0 - j, 1.0 + j)

    def contrast(x):
        f = rng.uniform(1.0 - j, 1.0 + j)
        gray = (x @ _LUMA).mean()
        return f * x + (1.0 - f) * gray

    def saturation(x):
        f = rng.uniform(1.0 - j, 1.0 + j)
        luma = (x @ _LUMA)[..., None]
        return f * x + (1.0 - f) * luma

    def hue(x):
        shift = rng.uniform(-config.jitter_hue, config.jitter_hue)
        hsv = _rgb_to_hsv(x / 255.0)
        hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
        return _hsv_to_rgb(hsv) * 255.0

    stages = [brightness, contrast, saturation, hue]
    for idx in rng.permutation(4):
        img = np.clip(stages[idx](img), 0.0, 255.0)
    return img


def mixup(batch_a: tuple[np.ndarray, np.ndarray], batch_b: tuple[np.ndarray, np.ndarray],
          alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of two batches with a single lambda ~ Beta(alpha, alpha)."""
    imgs_a, labels_a = batch_a
    imgs_b, labels_b = batch_b
    if imgs_a.shape != imgs_b.shape or labels_a.shape != labels_b.shape:
        raise ValueError("mixup batches must have identical shapes")
    lam = labels_a.dtype.type(rng.beta(alpha, alpha))
    images = lam * imgs_a + (1 - lam) * imgs_b
    labels = lam * labels_a + (1 - lam) * labels_b
    return images.astype(imgs_a.dtype), labels.astype(labels_a.dtype)


def train_transform(preprocessed: np.ndarray, config: AugmentConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Stochastic chain from a preprocessed [3,125,125] window to a model
    input [3,out,out]."""
    img = to_uint8(preprocessed)
    img = random_resized_crop(img, config, rng)
    img = random_hflip(img, config.flip_prob, rng)
    img = random_rotate(img, config.max_rotation_deg, rng)
    if config.color_jitter:
        img = color_jitter(img, config, rng)
    out = to_float(img)
    if config.imagenet_normalize:
        out = imagenet_normalize(out)
    return out


def validation_transform(window, stats: ChannelStats, config: AugmentConfig,
                         preproc: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Deterministic path: preprocess, bilinear resize to the output size,
    channel-first float32, ImageNet standardization on the conv path only."""
    pre = preprocess_window(window, stats, preproc)
    out = bilinear_resize_chw(pre, config.out_size)
    if config.imagenet_normalize:
        out = imagenet_normalize(out)
    return out
