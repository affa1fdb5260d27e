"""Skinnable Gaussian-splat avatars, pinhole cameras and a splat compositor."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff.tensor import ContractError
from .body import BodyParams, BodyTemplate, blend_points, shaped_template, skinning_transforms
from .vocab import APPEARANCES, REGIONS, Appearance, ConfigurationError, check

logger = logging.getLogger(__name__)

NEAR_PLANE = 1e-2
TRUNCATE_SIGMA = 3.0
SATURATION = 0.999


class BehindCameraError(ValueError):
    pass


@dataclass
class AvatarSplats:
    centers: np.ndarray       # (N, 3) rest-space positions
    radii: np.ndarray         # (N,) isotropic std-dev, world units
    colors: np.ndarray        # (N, 3) in [0, 1]
    opacities: np.ndarray     # (N,) in (0, 1]
    skin_weights: np.ndarray  # (N, K)
    anchors: np.ndarray       # (N,) nearest template vertex, carries blendshape offsets

    def __post_init__(self):
        if (self.radii <= 0).any():
            raise ValueError("splat radii must be positive")
        if (self.skin_weights < 0).any() or (np.abs(self.skin_weights.sum(axis=1) - 1) > 1e-6).any():
            raise ValueError("skin weight rows must be nonnegative and sum to one")

    def __len__(self) -> int:
        return self.centers.shape[0]


def nearest_vertices(tpl: BodyTemplate, points: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - tpl.rest_vertices[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def splats_at(tpl: BodyTemplate, points, colors, radius: float = 0.035, opacity: float = 0.95) -> AvatarSplats:
    """Splats at explicit rest-space points; skin weights come from the nearest vertex."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    anchors = nearest_vertices(tpl, points)
    n = len(points)
    return AvatarSplats(
        centers=points,
        radii=np.full(n, radius),
        colors=np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy(),
        opacities=np.full(n, opacity),
        skin_weights=tpl.weights[anchors].copy(),
        anchors=anchors,
    )


def bind_splats(tpl: BodyTemplate, appearance, n_splats: int, seed: int = 0,
                radius: float = 0.035) -> AvatarSplats:
    """Sample ``n_splats`` on the template surface and colour them by body region."""
    if tpl.n_vertices == 0:
        raise ContractError("template has no vertices")
    if n_splats < 1:
        raise ContractError("n_splats must be at least 1")
    if isinstance(appearance, str):
        check("appearance", appearance, APPEARANCES)
        appearance = APPEARANCES[appearance]
    assert isinstance(appearance, Appearance)

    rng = np.random.default_rng(seed)
    picks = rng.integers(0, tpl.n_vertices, size=n_splats)
    jitter = rng.normal(scale=0.012, size=(n_splats, 3))
    points = tpl.rest_vertices[picks] + jitter
    anchors = nearest_vertices(tpl, points)
    base = np.array([appearance.colors[REGIONS[r]] for r in tpl.regions[anchors]])
    shade = 1.0 + 0.18 * rng.standard_normal((n_splats, 1))
    colors = np.clip(base * shade, 0.02, 1.0)
    return AvatarSplats(
        centers=points,
        radii=radius * (0.8 + 0.4 * rng.random(n_splats)),
        colors=colors,
        opacities=0.85 + 0.15 * rng.random(n_splats),
        skin_weights=tpl.weights[anchors].copy(),
        anchors=anchors,
    )


def skin_splats(splats: AvatarSplats, tpl: BodyTemplate, params: BodyParams, root_translation=None) -> np.ndarray:
    """World-space splat centres under the same LBS field as the body mesh."""
    offsets = shaped_template(tpl, params.betas, params.pose, params.expression) - tpl.rest_vertices
    rest = splats.centers + offsets[splats.anchors]
    transforms = skinning_transforms(tpl, params.betas, params.pose, root_translation)
    return blend_points(rest, splats.skin_weights, transforms)


# -- camera -------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple
    focal: float
    resolution: tuple  # (width, height)

    def __post_init__(self):
        pos, target, up = (np.asarray(v, dtype=np.float64) for v in (self.position, self.look_at, self.up))
        view = target - pos
        if np.linalg.norm(view) < 1e-12:
            raise ValueError("camera position equals look_at")
        if np.linalg.norm(np.cross(view / np.linalg.norm(view), up)) < 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.width / 2.0, self.height / 2.0

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are right, down, forward."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    def to_camera(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - np.asarray(self.position, dtype=np.float64)) @ self.rotation().T


def project_points(cam: Camera, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised pinhole projection without the behind-camera check."""
    pc = cam.to_camera(np.atleast_2d(points))
    cx, cy = cam.principal_point
    z = pc[:, 2]
    safe = np.where(z > NEAR_PLANE, z, 1.0)
    return cx + cam.focal * pc[:, 0] / safe, cy + cam.focal * pc[:, 1] / safe, z


def project(cam: Camera, p) -> tuple[float, float, float]:
    u, v, z = project_points(cam, np.asarray(p, dtype=np.float64)[None])
    if z[0] <= NEAR_PLANE:
        raise BehindCameraError(f"point {tuple(p)} is not in front of the camera (depth {z[0]:.4g})")
    return float(u[0]), float(v[0]), float(z[0])


# -- compositing ----------------------------------------------------------------

@dataclass
class Frame:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray   # (H, W) accumulated opacity


def render_frame(centers: np.ndarray, splats: AvatarSplats, cam: Camera) -> Frame:
    """Front-to-back alpha compositing of isotropic splats over black.

    Splats are visited nearest first (ties by index); a pixel stops accepting
    contributions once its accumulated opacity exceeds 0.999.  Footprints are
    truncated at three screen-space standard deviations.
    """
    W, H = cam.width, cam.height
    color = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    if len(centers):
        u, v, z = project_points(cam, centers)
        visible = np.nonzero(z > NEAR_PLANE)[0]
        order = visible[np.lexsort((visible, z[visible]))]
        sigma = cam.focal * splats.radii / np.where(z > NEAR_PLANE, z, 1.0)
        for i in order:
            reach = TRUNCATE_SIGMA * sigma[i]
            x0, x1 = max(int(np.ceil(u[i] - reach)), 0), min(int(np.floor(u[i] + reach)), W - 1)
            y0, y1 = max(int(np.ceil(v[i] - reach)), 0), min(int(np.floor(v[i] + reach)), H - 1)
            if x0 > x1 or y0 > y1:
                continue
            dx = np.arange(x0, x1 + 1) - u[i]
            dy = np.arange(y0, y1 + 1) - v[i]
            d2 = dy[:, None] ** 2 + dx[None, :] ** 2
            a = splats.opacities[i] * np.exp(-0.5 * d2 / sigma[i] ** 2)
            a[d2 > reach * reach] = 0.0
            t = trans[y0:y1 + 1, x0:x1 + 1]
            a[t < 1.0 - SATURATION] = 0.0
            color[y0:y1 + 1, x0:x1 + 1] += (t * a)[:, :, None] * splats.colors[i]
            trans[y0:y1 + 1, x0:x1 + 1] = t * (1.0 - a)
    return Frame(np.clip(color, 0.0, 1.0), 1.0 - trans)


# -- camera paths ---------------------------------------------------------------

DEFAULT_DISTANCE = 4.0
FOCAL_PER_PIXEL = 1.35  # focal length as a multiple of image height


def default_focal(resolution) -> float:
    return FOCAL_PER_PIXEL * resolution[1]


def parse_trajectory(spec: str) -> tuple[str, dict]:
    """``orbit:360``, ``zoom_in:4.0..2.0``, ``zoom_out:2.0..4.0``, ``static`` or ``static:3.5``."""
    kind, _, arg = spec.strip().partition(":")
    try:
        if kind == "orbit":
            return kind, {"total_angle": float(arg) if arg else 360.0}
        if kind in ("zoom_in", "zoom_out"):
            if arg:
                start, sep, end = arg.partition("..")
                if not sep:
                    raise ValueError(arg)
                return kind, {"start": float(start), "end": float(end)}
            return kind, {"start": 4.5, "end": 2.5} if kind == "zoom_in" else {"start": 2.5, "end": 4.5}
        if kind == "static":
            return kind, {"distance": float(arg)} if arg else {}
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse camera spec {spec!r}") from exc
    raise ConfigurationError(f"unknown camera trajectory {kind!r} in {spec!r}")


def camera_trajectory(kind: str, params: dict, n_frames: int, target=(0.0, 0.9, 0.0),
                      resolution=(32, 32), focal: float | None = None, height: float = 0.0) -> list[Camera]:
    """Cameras looking at ``target`` for each of ``n_frames`` frames.

    zoom: distance interpolated geometrically from ``start`` to ``end``.
    orbit: angle_k = total_angle * k / (n_frames - 1) at fixed radius.
    """
    if n_frames < 2:
        raise ConfigurationError("a trajectory needs at least two frames")
    target = np.asarray(target, dtype=np.float64)
    focal = default_focal(resolution) if focal is None else focal
    up = (0.0, 1.0, 0.0)
    ks = np.arange(n_frames) / (n_frames - 1)

    if kind in ("zoom_in", "zoom_out"):
        start, end = float(params["start"]), float(params["end"])
        if start <= 0 or end <= 0:
            raise ConfigurationError("zoom distances must be positive")
        if (kind == "zoom_in") != (end < start):
            raise ConfigurationError(f"{kind} needs {'decreasing' if kind == 'zoom_in' else 'increasing'} distance")
        dists = start * (end / start) ** ks
        offsets = [np.array([0.0, height, d]) for d in dists]
    elif kind == "orbit":
        radius = float(params.get("radius", DEFAULT_DISTANCE))
        if radius <= 0:
            raise ConfigurationError("orbit radius must be positive")
        angles = np.deg2rad(float(params["total_angle"])) * ks
        offsets = [np.array([radius * np.sin(a), height, radius * np.cos(a)]) for a in angles]
    elif kind == "static":
        d = float(params.get("distance", DEFAULT_DISTANCE))
        if d <= 0:
            raise ConfigurationError("camera distance must be positive")
        offsets = [np.array([0.0, height, d])] * n_frames
    else:
        raise ConfigurationError(f"unknown camera trajectory {kind!r}")
    return [Camera(tuple(target + o), tuple(target), up, focal, tuple(resolution)) for o in offsets]


# -- output ---------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, pixels: np.ndarray) -> None:
    img = to_uint8(pixels)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def render_sequence(tpl: BodyTemplate, motion, actor_splats: list[AvatarSplats],
                    cams: list[Camera]) -> tuple[np.ndarray, np.ndarray]:
    """Render every frame of a pose sequence; returns (F, H, W, 3) colour and (F, H, W) alpha."""
    if len(cams) != motion.n_frames:
        raise ContractError(f"{len(cams)} cameras for {motion.n_frames} frames")
    if len(actor_splats) != motion.n_actors:
        raise ContractError(f"{len(actor_splats)} splat sets for {motion.n_actors} actors")
    merged = AvatarSplats(
        centers=np.concatenate([s.centers for s in actor_splats]),
        radii=np.concatenate([s.radii for s in actor_splats]),
        colors=np.concatenate([s.colors for s in actor_splats]),
        opacities=np.concatenate([s.opacities for s in actor_splats]),
        skin_weights=np.concatenate([s.skin_weights for s in actor_splats]),
        anchors=np.concatenate([s.anchors for s in actor_splats]),
    )
    colors, alphas = [], []
    for f, cam in enumerate(cams):
        world = np.concatenate([
            skin_splats(s, tpl, *motion.actor(f, a)) for a, s in enumerate(actor_splats)
        ])
        frame = render_frame(world, merged, cam)
        colors.append(frame.pixels)
        alphas.append(frame.alpha)
    return np.stack(colors), np.stack(alphas)


def subject_centroid(tpl: BodyTemplate, motion) -> np.ndarray:
    """Mean pelvis position over all frames and actors."""
    from .body import posed_joints

    pts = [posed_joints(tpl, *motion.actor(f, a))[0] for f in range(motion.n_frames) for a in range(motion.n_actors)]
    return np.mean(pts, axis=0)
