"""Fundus photograph normalization: square field-of-view crop, resize, luminance flattening."""

import logging
import warnings
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter, map_coordinates

log = logging.getLogger("raredetect")

OUTPUT_SIZE = 299


class PreprocessError(ValueError):
    pass


class RoiFallbackWarning(UserWarning):
    """No pixel exceeded the luminance threshold; the centered square was used."""


def rgb_to_ycrcb(rgb):
    """ITU-R BT.601 full-range RGB -> YCrCb (float, 8-bit scale)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cr = (r - y) * 0.713 + 128.0
    cb = (b - y) * 0.564 + 128.0
    return np.stack([y, cr, cb], axis=-1)


def ycrcb_to_rgb(ycc):
    ycc = np.asarray(ycc, dtype=np.float64)
    y, cr, cb = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.403 * cr
    g = y - 0.714 * cr - 0.344 * cb
    b = y + 1.773 * cb
    return np.stack([r, g, b], axis=-1)


def _to_u8(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def find_roi(rgb, threshold=10):
    """Square ``(top, left, side)`` around pixels brighter than ``threshold``.

    The square is centered on the bounding box of bright pixels and may
    extend past the image border. Returns ``None`` when no pixel is bright.
    """
    y = rgb_to_ycrcb(rgb)[..., 0]
    rows = np.flatnonzero((y > threshold).any(axis=1))
    cols = np.flatnonzero((y > threshold).any(axis=0))
    if len(rows) == 0:
        return None
    top, bottom = rows[0], rows[-1] + 1
    left, right = cols[0], cols[-1] + 1
    side = max(bottom - top, right - left)
    top -= (side - (bottom - top)) // 2
    left -= (side - (right - left)) // 2
    return int(top), int(left), int(side)


def crop_square(rgb, top, left, side):
    """Crop a square window clipped to the image bounds.

    When the square extends past a border the result is the in-image part,
    which is then no longer square.
    """
    h, w = rgb.shape[:2]
    y0, y1 = max(top, 0), min(top + side, h)
    x0, x1 = max(left, 0), min(left + side, w)
    if y1 <= y0 or x1 <= x0:
        raise PreprocessError("region of interest lies outside the image")
    return rgb[y0:y1, x0:x1]


def resize_bilinear(image, size):
    """Bilinear resize of an ``(h, w, c)`` array to ``(size, size, c)`` floats.

    Non-square inputs are stretched to the square output.

    Pixel centers are aligned (``src = (dst + 0.5) * scale - 0.5``) and
    samples beyond the border repeat the edge pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    ys = (np.arange(size) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size) + 0.5) * (w / size) - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return np.stack(
        [map_coordinates(image[..., c], grid, order=1, mode="nearest") for c in range(image.shape[2])],
        axis=-1,
    )


def preprocess_fundus(image, roi_threshold=10, sigma=5.0, size=OUTPUT_SIZE):
    """Normalize size and illumination of one RGB fundus photograph.

    Parameters
    ----------
    image : ndarray, shape (h, w, 3), uint8
    roi_threshold : float
        Luminance level (0-255) above which a pixel belongs to the field of view.
    sigma : float
        Standard deviation, in output pixels, of the Gaussian background estimate.
    size : int
        Output side length.

    Returns
    -------
    ndarray, shape (size, size, 3), uint8
        Image whose luminance has its smooth background removed and is
        re-centered on 128; chrominance is carried through unchanged.
    """
    rgb = np.asarray(image)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise PreprocessError(f"expected an (h, w, 3) RGB image, got shape {rgb.shape}")
    roi = find_roi(rgb, roi_threshold)
    if roi is None or roi[2] == 0:
        h, w = rgb.shape[:2]
        side = min(h, w)
        roi = ((h - side) // 2, (w - side) // 2, side)
        warnings.warn("no field of view detected; using the centered square", RoiFallbackWarning, stacklevel=2)
    square = crop_square(rgb, *roi)
    resized = _to_u8(resize_bilinear(square, size))

    ycc = _to_u8(rgb_to_ycrcb(resized)).astype(np.float64)
    luma = ycc[..., 0]
    background = gaussian_filter(luma, sigma=sigma, mode="reflect", truncate=4.0)
    ycc[..., 0] = np.clip(np.rint(luma - background + 128.0), 0, 255)
    return _to_u8(ycrcb_to_rgb(ycc))


def load_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise PreprocessError(f"cannot read image {path}: {exc}") from exc


def save_image(path, rgb):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


def preprocess_directory(in_dir, out_dir, roi_threshold=10, sigma=5.0):
    """Preprocess every image in ``in_dir`` into PNG files in ``out_dir``.

    Returns the list of written paths; unreadable files raise
    :class:`PreprocessError`.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    suffixes = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}
    for path in sorted(p for p in in_dir.iterdir() if p.suffix.lower() in suffixes):
        out = preprocess_fundus(load_image(path), roi_threshold=roi_threshold, sigma=sigma)
        target = out_dir / (path.stem + ".png")
        save_image(target, out)
        written.append(target)
        log.info({"event": "preprocess", "file": path.name})
    return written
