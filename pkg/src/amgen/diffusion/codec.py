"""Fixed invertible latent codec.

Each non-overlapping 2x2 patch of every colour channel is mixed by the
orthonormal Haar basis, giving 12 latent channels at half resolution.  Latent
channel ``k * 3 + colour`` holds basis function ``k``; k = 0 is the patch mean
(DC) term, so channels 0-2 carry the low-pass image.
"""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import DimensionError

C_LAT = 12

# rows: average, horizontal detail, vertical detail, diagonal detail
HAAR = 0.5 * np.array([
    [1.0, 1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
])


def patch_encode(video: np.ndarray) -> np.ndarray:
    """(f, h, w, 3) -> (f, h/2, w/2, 12)."""
    v = np.asarray(video)
    if v.ndim != 4 or v.shape[-1] != 3:
        raise DimensionError(f"expected a (frames, h, w, 3) video, got {v.shape}")
    f, h, w, _ = v.shape
    if h % 2 or w % 2:
        raise DimensionError(f"resolution {h}x{w} is not divisible by 2")
    patches = v.reshape(f, h // 2, 2, w // 2, 2, 3).transpose(0, 1, 3, 2, 4, 5).reshape(f, h // 2, w // 2, 4, 3)
    coeffs = np.einsum("kp,fijpc->fijkc", HAAR, patches)
    return coeffs.reshape(f, h // 2, w // 2, C_LAT)


def patch_decode(latent: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`patch_encode`."""
    z = np.asarray(latent)
    if z.ndim != 4 or z.shape[-1] != C_LAT:
        raise DimensionError(f"expected a (frames, h, w, {C_LAT}) latent, got {z.shape}")
    f, h2, w2, _ = z.shape
    coeffs = z.reshape(f, h2, w2, 4, 3)
    patches = np.einsum("kp,fijkc->fijpc", HAAR, coeffs)
    return patches.reshape(f, h2, w2, 2, 2, 3).transpose(0, 1, 3, 2, 4, 5).reshape(f, 2 * h2, 2 * w2, 3)


def video_to_latent(video: np.ndarray) -> np.ndarray:
    """Centre pixel values from [0, 1] to [-1, 1] and encode."""
    return patch_encode(2.0 * np.asarray(video, dtype=np.float64) - 1.0)


def latent_to_video(latent: np.ndarray) -> np.ndarray:
    return np.clip((patch_decode(latent) + 1.0) / 2.0, 0.0, 1.0)
