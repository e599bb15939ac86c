"""Gaussian-bump images with measurable thickness and intensity."""
from __future__ import annotations

import numpy as np

ANGLE_CENTER = np.pi / 4


def render_blobs(thickness, intensity, offset, angle, resolution: int = 16) -> np.ndarray:
    """Render a batch of anisotropic Gaussian bumps, flattened row-major.

    The per-axis widths are ``thickness * cos(angle)`` and
    ``thickness * sin(angle)``, so the intensity-weighted RMS radius of the
    continuous bump equals ``thickness``. ``offset`` is the integer shift of
    the centre from pixel ``(resolution // 2, resolution // 2)``; with an
    integer centre the peak pixel equals ``intensity``.
    """
    thickness = np.atleast_1d(np.asarray(thickness, dtype=np.float64))
    intensity = np.atleast_1d(np.asarray(intensity, dtype=np.float64))
    offset = np.asarray(offset, dtype=np.float64).reshape(-1, 2)
    angle = np.atleast_1d(np.asarray(angle, dtype=np.float64))
    grid = np.arange(resolution, dtype=np.float64)
    c = resolution // 2
    cu = (c + offset[:, 0])[:, None]
    cv = (c + offset[:, 1])[:, None]
    su = (thickness * np.cos(angle))[:, None]
    sv = (thickness * np.sin(angle))[:, None]
    gu = np.exp(-0.5 * ((grid[None, :] - cu) / su) ** 2)  # (n, R) rows
    gv = np.exp(-0.5 * ((grid[None, :] - cv) / sv) ** 2)  # (n, R) cols
    img = intensity[:, None, None] * gu[:, :, None] * gv[:, None, :]
    return img.reshape(len(thickness), resolution * resolution)


def render_blob(thickness: float, intensity: float, offset=(0, 0), angle: float = ANGLE_CENTER,
                resolution: int = 16) -> np.ndarray:
    return render_blobs([thickness], [intensity], [offset], [angle], resolution)[0]


def blob_attributes(image, resolution: int = 16) -> tuple[float, float]:
    """(thickness, intensity) of a rendered blob.

    Intensity is the peak pixel value; thickness is the intensity-weighted RMS
    radius about the intensity centroid. Negative pixels carry no weight.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size != resolution * resolution:
        raise ValueError(f"image has {img.size} pixels, expected {resolution * resolution}")
    th, inten = blob_attributes_batch(img.reshape(1, -1), resolution)
    return float(th[0]), float(inten[0])


def blob_attributes_batch(images, resolution: int = 16) -> tuple[np.ndarray, np.ndarray]:
    imgs = np.asarray(images, dtype=np.float64).reshape(-1, resolution, resolution)
    w = np.clip(imgs, 0.0, None)
    mass = w.sum(axis=(1, 2))
    if np.any(mass <= 0):
        bad = int(np.flatnonzero(mass <= 0)[0])
        raise ValueError(f"image {bad} has no positive mass; attributes undefined")
    grid = np.arange(resolution, dtype=np.float64)
    mu_u = (w.sum(axis=2) * grid).sum(axis=1) / mass
    mu_v = (w.sum(axis=1) * grid).sum(axis=1) / mass
    du = (grid[None, :] - mu_u[:, None]) ** 2
    dv = (grid[None, :] - mu_v[:, None]) ** 2
    second = (w.sum(axis=2) * du).sum(axis=1) + (w.sum(axis=1) * dv).sum(axis=1)
    thickness = np.sqrt(second / mass)
    intensity = imgs.reshape(len(imgs), -1).max(axis=1)
    return thickness, intensity
