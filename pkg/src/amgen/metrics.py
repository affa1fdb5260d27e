"""Evaluation: text-frame similarity and the motion fidelity score.

The text/image embedder is a frozen bag-of-tokens model: every vocabulary
token owns a seeded random unit vector and a frame is embedded by projecting
its 8x8 thumbnail through a fixed seeded random matrix.  Motion fidelity
compares two sets of point tracks through their per-frame displacements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .autodiff.tensor import ContractError, DimensionError
from .body import DegeneracyError, posed_joints
from .vocab import TOKENS

log = logging.getLogger(__name__)

EMBED_DIM = 64
THUMB = 8


# -- text / image similarity ----------------------------------------------------

def text_image_similarity(t, i) -> float:
    """100 * cosine(t, i)."""
    t = np.asarray(t, dtype=np.float64).ravel()
    i = np.asarray(i, dtype=np.float64).ravel()
    nt, ni = np.linalg.norm(t), np.linalg.norm(i)
    if nt == 0 or ni == 0:
        raise DegeneracyError("similarity of a zero vector is undefined")
    return float(100.0 * (t @ i) / (nt * ni))


def _thumbnail(frame: np.ndarray, size: int = THUMB) -> np.ndarray:
    """Area-average an (h, w, 3) frame down to (size, size, 3)."""
    h, w = frame.shape[:2]
    rows = np.linspace(0, h, size + 1).astype(int)
    cols = np.linspace(0, w, size + 1).astype(int)
    out = np.empty((size, size, frame.shape[2]))
    for a in range(size):
        for b in range(size):
            block = frame[rows[a]:max(rows[a + 1], rows[a] + 1), cols[b]:max(cols[b + 1], cols[b] + 1)]
            out[a, b] = block.reshape(-1, frame.shape[2]).mean(axis=0)
    return out


class EmbedVocab:
    """Frozen token and frame embedder standing in for a pretrained text/image model."""

    def __init__(self, tokens=TOKENS, dim: int = EMBED_DIM, seed: int = 0):
        self.tokens = tuple(tokens)
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((len(self.tokens), dim))
        self._vectors = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        self._index = {tok: k for k, tok in enumerate(self.tokens)}
        self._vectors.setflags(write=False)

    @cached_property
    def projection(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1])
        return rng.standard_normal((THUMB * THUMB * 3, self.dim)) / np.sqrt(THUMB * THUMB * 3)

    def vector(self, token: str) -> np.ndarray:
        return self._vectors[self._index[token]]

    def embed_text(self, caption: str) -> np.ndarray:
        words = caption.lower().split()
        known = [w for w in words if w in self._index]
        unknown = sorted(set(words) - set(known))
        if unknown:
            log.warning("skipping tokens outside the vocabulary: %s", ", ".join(unknown))
        if not known:
            raise DegeneracyError(f"caption {caption!r} has no known tokens")
        v = np.sum([self.vector(w) for w in known], axis=0)
        n = np.linalg.norm(v)
        if n == 0:
            raise DegeneracyError("caption embedding is the zero vector")
        return v / n

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        thumb = _thumbnail(np.asarray(frame, dtype=np.float64))
        v = (2.0 * thumb.ravel() - 1.0) @ self.projection
        n = np.linalg.norm(v)
        if n == 0:
            raise DegeneracyError("frame embedding is the zero vector")
        return v / n


def clip_style_video_score(video: np.ndarray, caption: str, vocab: EmbedVocab) -> float:
    """Mean over frames of the similarity between frame and caption embeddings."""
    text = vocab.embed_text(caption)
    scores = [text_image_similarity(vocab.embed_frame(frame), text) for frame in video]
    return float(np.mean(scores))


# -- tracklets ------------------------------------------------------------------

@dataclass(frozen=True)
class Tracklet:
    points: np.ndarray   # (F, 2) pixel positions (x, y)

    @property
    def displacements(self) -> np.ndarray:
        return np.diff(np.asarray(self.points, dtype=np.float64), axis=0)

    @classmethod
    def from_displacements(cls, start, disp) -> "Tracklet":
        disp = np.asarray(disp, dtype=np.float64).reshape(-1, 2)
        pts = np.vstack([np.asarray(start, dtype=np.float64)[None], np.asarray(start) + np.cumsum(disp, axis=0)])
        return cls(pts)


def _search_offsets(window: int) -> np.ndarray:
    """Candidate displacements ordered so ties resolve to the smallest move."""
    r = np.arange(-window, window + 1)
    d = np.array([(dx, dy) for dy in r for dx in r])
    order = np.lexsort((d[:, 0], d[:, 1], np.abs(d).sum(axis=1), (d ** 2).sum(axis=1)))
    return d[order]


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (H, W, c) ``img`` at float (ys[..., None], xs[..., None, :]) with wrap-around."""
    H, W = img.shape[:2]
    y0, x0 = np.floor(ys).astype(np.int64), np.floor(xs).astype(np.int64)
    wy, wx = (ys - y0)[..., :, None, None], (xs - x0)[..., None, :, None]
    ya, yb = (y0 % H)[..., :, None], ((y0 + 1) % H)[..., :, None]
    xa, xb = (x0 % W)[..., None, :], ((x0 + 1) % W)[..., None, :]
    top = img[ya, xa] * (1 - wx) + img[ya, xb] * wx
    bottom = img[yb, xa] * (1 - wx) + img[yb, xb] * wx
    return top * (1 - wy) + bottom * wy


def _parabola(c_minus: np.ndarray, c0: np.ndarray, c_plus: np.ndarray) -> np.ndarray:
    denom = c_minus - 2.0 * c0 + c_plus
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(denom > 0, 0.5 * (c_minus - c_plus) / denom, 0.0)
    return np.clip(step, -0.5, 0.5)


def extract_tracklets(video: np.ndarray, grid_stride: int = 8, window: int = 2, mask=None,
                      subpixel: bool = True) -> list[Tracklet]:
    """Block-matching point tracks seeded on a grid over frame 0.

    Each point is advanced frame to frame by minimising the sum of absolute
    differences (SAD) of the (2 window + 1)^2 patch around it over a +-window
    search range; patches wrap around the image border.  With ``subpixel`` the
    integer minimum is refined by a parabola through the neighbouring SAD
    values, unless the match is already exact.  ``mask`` (h, w) restricts the
    seeds to pixels where it is true.
    """
    v = np.asarray(video, dtype=np.float64)
    if v.ndim == 3:
        v = v[..., None]
    if v.ndim != 4:
        raise DimensionError(f"expected (frames, h, w[, c]) video, got {np.shape(video)}")
    if v.shape[0] < 2:
        raise ContractError("tracking needs at least two frames")
    if grid_stride < 1 or window < 0:
        raise ValueError("grid_stride must be positive and window non-negative")
    F, H, W = v.shape[:3]
    start = grid_stride // 2
    seeds = [(x, y) for y in range(start, H, grid_stride) for x in range(start, W, grid_stride)]
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        seeds = [(x, y) for x, y in seeds if m[y, x]]
    if not seeds:
        return []

    R = window + 1  # one extra ring of SAD values for the refinement
    offsets = _search_offsets(window)
    patch = np.arange(-window, window + 1, dtype=np.float64)
    pts = np.array(seeds, dtype=np.float64)
    n = len(pts)
    rows = np.arange(n)
    track = [pts.copy()]
    for f in range(F - 1):
        ys = pts[:, 1, None] + patch[None]
        xs = pts[:, 0, None] + patch[None]
        ref = _bilinear(v[f], ys, xs)
        costs = np.full((n, 2 * R + 1, 2 * R + 1), np.inf)
        for dy in range(-R, R + 1):
            for dx in range(-R, R + 1):
                cand = _bilinear(v[f + 1], ys + dy, xs + dx)
                costs[:, dy + R, dx + R] = np.abs(cand - ref).sum(axis=(1, 2, 3))
        inner = costs[:, offsets[:, 1] + R, offsets[:, 0] + R]
        best = offsets[np.argmin(inner, axis=1)]   # first minimum = smallest move
        step = best.astype(np.float64)
        if subpixel:
            by, bx = best[:, 1] + R, best[:, 0] + R
            c0 = costs[rows, by, bx]
            sx = _parabola(costs[rows, by, bx - 1], c0, costs[rows, by, bx + 1])
            sy = _parabola(costs[rows, by - 1, bx], c0, costs[rows, by + 1, bx])
            exact = c0 == 0
            step[:, 0] += np.where(exact, 0.0, sx)
            step[:, 1] += np.where(exact, 0.0, sy)
        pts = pts + step
        track.append(pts.copy())
    stacked = np.stack(track, axis=1)  # (n, F, 2)
    return [Tracklet(p) for p in stacked]


def joint_tracklets(tpl, motion, cams, joints=None) -> list[Tracklet]:
    """Analytic tracks: projected joint positions of every actor over the sequence."""
    from .render import project_points

    if len(cams) != motion.n_frames:
        raise ContractError(f"{len(cams)} cameras for {motion.n_frames} frames")
    joints = range(tpl.n_joints) if joints is None else joints
    out = []
    for a in range(motion.n_actors):
        pts = np.zeros((motion.n_frames, len(joints), 2))
        for f, cam in enumerate(cams):
            world = posed_joints(tpl, *motion.actor(f, a))[list(joints)]
            u, v, _ = project_points(cam, world)
            pts[f, :, 0], pts[f, :, 1] = u, v
        out.extend(Tracklet(pts[:, j]) for j in range(len(joints)))
    return out


# -- correlation and fidelity ---------------------------------------------------

def _displacements(t) -> np.ndarray:
    return t.displacements if isinstance(t, Tracklet) else np.asarray(t, dtype=np.float64)


def tracklet_corr(tau, tau_tilde) -> float:
    """Mean over frames of the cosine between per-frame displacements.

    Arguments are Tracklets or (F-1, 2) displacement arrays.  A frame where
    either displacement is zero contributes 0.
    """
    a, b = _displacements(tau), _displacements(tau_tilde)
    if a.shape != b.shape:
        raise ContractError(f"tracklets differ in length: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ContractError("tracklets need at least one displacement")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    cos = np.zeros(len(a))
    cos[ok] = (a[ok] * b[ok]).sum(axis=1) / (na[ok] * nb[ok])
    return float(cos.mean())


def corr_matrix(T, T_tilde) -> np.ndarray:
    """corr[i, j] = tracklet_corr(T[i], T_tilde[j])."""
    if len(T) == 0 or len(T_tilde) == 0:
        raise ContractError("correlation needs two non-empty tracklet sets")
    A = np.stack([_displacements(t) for t in T])        # (n, F-1, 2)
    B = np.stack([_displacements(t) for t in T_tilde])  # (m, F-1, 2)
    if A.shape[1:] != B.shape[1:]:
        raise ContractError(f"tracklet sets differ in length: {A.shape[1]} vs {B.shape[1]} displacements")
    na, nb = np.linalg.norm(A, axis=2), np.linalg.norm(B, axis=2)
    dots = np.einsum("ifc,jfc->ijf", A, B)
    denom = na[:, None, :] * nb[None, :, :]
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return cos.mean(axis=2)


def motion_fidelity_raw(T, T_tilde) -> float:
    """Two-sided nearest-neighbour correlation, in [-2, 2]."""
    if len(T) == 0 or len(T_tilde) == 0:
        raise ContractError("motion fidelity needs two non-empty tracklet sets")
    c = corr_matrix(T, T_tilde)
    return float(c.max(axis=0).mean() + c.max(axis=1).mean())


def motion_fidelity(T, T_tilde) -> float:
    """50 x the raw score, so identical sets of moving tracks score 100."""
    return 50.0 * motion_fidelity_raw(T, T_tilde)


def foreground_mask(frame: np.ndarray) -> np.ndarray:
    """Pixels of a black-background rendering that are not exactly black."""
    return (np.asarray(frame) != 0).any(axis=-1)


def video_motion_fidelity(generated: np.ndarray, condition: np.ndarray, grid_stride: int = 4,
                          window: int = 2) -> float:
    """Tracks in both videos seeded on the condition's frame-0 foreground."""
    mask = foreground_mask(condition[0])
    if not mask.any():
        mask = None
    T = extract_tracklets(condition, grid_stride, window, mask)
    T_gen = extract_tracklets(generated, grid_stride, window, mask)
    if not T or not T_gen:
        raise ContractError("no tracklets could be seeded")
    return motion_fidelity(T, T_gen)
