"""Synthetic paired dataset: scene video V, caption y_s and avatar video V_a.

The "real" clip is itself synthesized by compositing the avatar render over a
procedural background and applying a scene lighting tint, so the mapping the
conditional model has to learn (avatar -> composited scene) is known exactly.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.io import load_tensor, save_tensor
from .autodiff.tensor import ContractError
from .body import BodyTemplate, PoseSequence, default_template, generate_motion
from .config import DatasetConfig, format_config, read_config
from .render import (
    AvatarSplats,
    Camera,
    bind_splats,
    camera_trajectory,
    parse_trajectory,
    render_sequence,
    subject_centroid,
)
from .vocab import ACTIONS, APPEARANCES, SCENES, check

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
HORIZON = 0.55  # fraction of the image height where ground starts


# -- scenes -------------------------------------------------------------------

@dataclass(frozen=True)
class _Palette:
    sky_top: tuple
    sky_bottom: tuple
    ground: tuple
    prop: tuple
    tint: tuple        # diagonal of the lighting matrix; row sums + bias stay <= 1
    mix: float         # off-diagonal colour bleed
    bias: tuple


_PALETTES = {
    "park": _Palette((0.35, 0.6, 0.9), (0.7, 0.85, 0.95), (0.25, 0.55, 0.2), (0.1, 0.35, 0.12),
                     (0.92, 0.95, 0.86), 0.01, (0.0, 0.02, 0.0)),
    "beach": _Palette((0.3, 0.65, 0.95), (0.75, 0.9, 1.0), (0.9, 0.8, 0.55), (1.0, 0.9, 0.3),
                      (0.95, 0.92, 0.8), 0.01, (0.03, 0.02, 0.0)),
    "street": _Palette((0.55, 0.6, 0.68), (0.75, 0.78, 0.8), (0.3, 0.3, 0.32), (0.5, 0.45, 0.42),
                       (0.86, 0.9, 0.94), 0.02, (0.0, 0.0, 0.02)),
    "ballroom": _Palette((0.35, 0.08, 0.1), (0.5, 0.15, 0.12), (0.45, 0.28, 0.14), (0.95, 0.8, 0.35),
                         (0.93, 0.82, 0.66), 0.02, (0.03, 0.015, 0.0)),
}


@dataclass(frozen=True)
class SceneSpec:
    """Scene identity, its background image and the lighting tint ``x -> clip(M x + b)``."""

    scene_id: str
    seed: int
    background: np.ndarray = field(repr=False)
    tint_matrix: np.ndarray = field(repr=False)
    tint_bias: np.ndarray = field(repr=False)

    def tint(self, pixels: np.ndarray) -> np.ndarray:
        return np.clip(pixels @ self.tint_matrix.T + self.tint_bias, 0.0, 1.0)


def _tint_params(p: _Palette) -> tuple[np.ndarray, np.ndarray]:
    m = np.full((3, 3), p.mix) + np.diag(np.asarray(p.tint) - p.mix)
    return m, np.asarray(p.bias, dtype=np.float64)


def synth_scene(scene_id: str, resolution=(32, 32), seed: int = 0) -> SceneSpec:
    """Procedural background: sky gradient, noisy ground and a few flat props."""
    check("scene", scene_id, SCENES)
    w, h = int(resolution[0]), int(resolution[1])
    p = _PALETTES[scene_id]
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w]
    v = ys / max(h - 1, 1)
    horizon = int(round(HORIZON * h))

    sky_t = np.clip(v / HORIZON, 0.0, 1.0)[..., None]
    img = (1 - sky_t) * np.asarray(p.sky_top) + sky_t * np.asarray(p.sky_bottom)
    cell = max(1, min(h, w) // 8)  # texture grain of a few pixels, independent of resolution
    grain = rng.random((-(-h // cell), -(-w // cell), 1)).repeat(cell, 0).repeat(cell, 1)[:h, :w]
    ground = np.asarray(p.ground) * (0.85 + 0.3 * grain)
    img = np.where((ys >= horizon)[..., None], ground, img)

    if scene_id == "beach":  # a band of sea just above the sand
        sea = (ys >= horizon - max(1, h // 10)) & (ys < horizon)
        img[sea] = (0.1, 0.4, 0.7)
    n_props = 3
    for _ in range(n_props):
        cx = rng.uniform(0, w)
        if scene_id in ("park", "street"):
            half_w = rng.uniform(0.05, 0.12) * w
            top = horizon - rng.uniform(0.15, 0.4) * h
            box = (np.abs(xs - cx) <= half_w) & (ys >= top) & (ys < horizon)
            shade = 0.8 + 0.4 * rng.random()
            img[box] = np.clip(np.asarray(p.prop) * shade, 0, 1)
        else:  # sun or chandeliers: discs in the upper part of the frame
            cy = rng.uniform(0.08, 0.3) * h
            r = rng.uniform(0.04, 0.08) * max(w, h)
            disc = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
            img[disc] = p.prop
    m, b = _tint_params(p)
    return SceneSpec(scene_id, seed, np.clip(img, 0.0, 1.0), m, b)


# -- captions -----------------------------------------------------------------

def caption(scene_id: str, appearance_ids, action: str) -> str:
    """e.g. "a man in a white shirt and a woman in a yellow dress dancing in a park"."""
    if isinstance(appearance_ids, str):
        appearance_ids = [appearance_ids]
    check("scene", scene_id, SCENES)
    check("action", action, ACTIONS)
    if not appearance_ids:
        raise ContractError("a caption needs at least one actor")
    for a in appearance_ids:
        check("appearance", a, APPEARANCES)
    who = " and ".join(APPEARANCES[a].phrase for a in appearance_ids)
    return f"{who} {ACTIONS[action]} {SCENES[scene_id]}"


# -- samples ------------------------------------------------------------------

@dataclass
class DataSample:
    video: np.ndarray      # V   (F, H, W, 3)
    caption: str           # y_s
    avatar: np.ndarray     # V_a (F, H, W, 3), black background
    meta: dict = field(default_factory=dict)


def make_sample(motion: PoseSequence, actor_splats: list[AvatarSplats], scene: SceneSpec,
                cams: list[Camera], appearance_ids, tpl: BodyTemplate | None = None,
                meta: dict | None = None) -> DataSample:
    """Render V_a on black, composite it over the background and tint the result."""
    if len(cams) != motion.n_frames:
        raise ContractError(f"{len(cams)} cameras for {motion.n_frames} frames")
    tpl = default_template() if tpl is None else tpl
    colors, alphas = render_sequence(tpl, motion, actor_splats, cams)
    if scene.background.shape != colors.shape[1:]:
        raise ContractError(f"background {scene.background.shape} does not match frames {colors.shape[1:]}")
    composite = colors + (1.0 - alphas)[..., None] * scene.background
    video = scene.tint(composite)
    text = caption(scene.scene_id, appearance_ids, motion.action)
    return DataSample(video, text, colors, dict(meta or {}))


def sample_seeds(master: int, index: int) -> dict[str, int]:
    state = np.random.SeedSequence([master, index]).generate_state(3)
    return {"motion_seed": int(state[0] % 2**31), "splat_seed": int(state[1] % 2**31),
            "scene_seed": int(state[2] % 2**31)}


def sample_plan(cfg: DatasetConfig) -> list[dict]:
    """Metadata of every sample, in dataset order; a pure function of the config."""
    plan = []
    combos = itertools.product(cfg.actions, cfg.scenes, cfg.appearances, cfg.cameras)
    index = 0
    for action, scene, looks, camera in combos:
        for _ in range(cfg.samples_per_combo):
            meta = {"index": index, "action": action, "scene": scene, "appearances": looks,
                    "camera": camera, "frames": cfg.frames,
                    "resolution": f"{cfg.resolution[0]}x{cfg.resolution[1]}",
                    "actors": len(looks.split("+")), "n_splats": cfg.n_splats, "fps": cfg.fps}
            meta.update(sample_seeds(cfg.seed, index))
            plan.append(meta)
            index += 1
    return plan


def _resolution(meta) -> tuple[int, int]:
    w, h = str(meta["resolution"]).split("x")
    return int(w), int(h)


def scene_setup(meta: dict, tpl: BodyTemplate | None = None):
    """Regenerate motion, splats, scene and cameras described by sample metadata."""
    tpl = default_template() if tpl is None else tpl
    frames, actors = int(meta["frames"]), int(meta["actors"])
    motion = generate_motion(meta["action"], frames, actors, seed=int(meta["motion_seed"]),
                             fps=float(meta["fps"]))
    looks = str(meta["appearances"]).split("+")
    splats = [bind_splats(tpl, look, int(meta["n_splats"]), seed=int(meta["splat_seed"]) + a)
              for a, look in enumerate(looks)]
    res = _resolution(meta)
    scene = synth_scene(meta["scene"], res, seed=int(meta["scene_seed"]))
    kind, params = parse_trajectory(meta["camera"])
    target = subject_centroid(tpl, motion)
    cams = camera_trajectory(kind, params, frames, target=target, resolution=res)
    return motion, splats, scene, cams, looks


def generate_sample(meta: dict, tpl: BodyTemplate | None = None) -> DataSample:
    motion, splats, scene, cams, looks = scene_setup(meta, tpl)
    return make_sample(motion, splats, scene, cams, looks, tpl, meta)


def split_assignment(n: int, ratio: float, seed: int) -> list[str]:
    """``floor(n * ratio)`` train samples chosen by a seeded permutation, the rest test."""
    n_train = int(np.floor(n * ratio + 1e-9))
    order = np.random.default_rng(seed).permutation(n)
    split = ["test"] * n
    for i in order[:n_train]:
        split[i] = "train"
    return split


def write_sample(sample: DataSample, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "video.amgt", sample.video)
    save_tensor(d / "avatar.amgt", sample.avatar)
    (d / "caption.txt").write_text(sample.caption + "\n")
    (d / "meta.txt").write_text(format_config(sample.meta))


def read_meta(directory) -> dict:
    return read_config(Path(directory) / "meta.txt")


def load_sample(directory) -> DataSample:
    d = Path(directory)
    return DataSample(
        video=load_tensor(d / "video.amgt"),
        caption=(d / "caption.txt").read_text().strip(),
        avatar=load_tensor(d / "avatar.amgt"),
        meta=read_meta(d),
    )


def build_dataset(cfg: DatasetConfig, out_dir, tpl: BodyTemplate | None = None) -> Path:
    """Write every sample of ``cfg`` under ``out_dir`` followed by the manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    plan = sample_plan(cfg)
    splits = split_assignment(len(plan), cfg.split_ratio, cfg.seed)
    tpl = default_template() if tpl is None else tpl
    rows = []
    for meta, split in zip(plan, splits):
        meta["split"] = split
        rel = f"sample_{meta['index']:05d}"
        write_sample(generate_sample(meta, tpl), root / rel)
        rows.append(f"{meta['index']}\t{rel}\t{split}\n")
        log.debug("wrote %s (%s)", rel, split)
    (root / MANIFEST).write_text("".join(rows))
    log.info("dataset of %d samples written to %s", len(plan), root)
    return root


def read_manifest(root) -> list[tuple[int, str, str]]:
    path = Path(root) / MANIFEST
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            idx, rel, split = line.split("\t")
            out.append((int(idx), rel, split))
    return out


def split_dirs(root, split: str) -> list[Path]:
    return [Path(root) / rel for _, rel, s in read_manifest(root) if s == split]
