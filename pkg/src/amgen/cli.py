"""Command-line front end: ``amgen gen-data | train | sample | render | eval``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric failure.  Every stochastic command requires ``--seed``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff.io import FormatError, load_tensor, save_tensor
from .autodiff.tensor import ContractError, DimensionError, NumericError
from .body import DegeneracyError, default_template
from .config import DatasetConfig, TrainConfig, parse_resolution, read_config
from .data import build_dataset, caption, read_manifest, sample_seeds, scene_setup
from .diffusion import ddim_sample, make_schedule, video_to_latent
from .metrics import EmbedVocab, clip_style_video_score, video_motion_fidelity
from .render import BehindCameraError, render_sequence, to_uint8, write_ppm
from .train import checkpoint_kind, load_checkpoint, train_stage
from .vocab import ConfigurationError

log = logging.getLogger("amgen")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for I/O errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- gen-data -------------------------------------------------------------------

def _config_mapping(path, seed: int) -> dict:
    mapping = read_config(path)
    if "seed" in mapping and int(mapping["seed"]) != seed:
        log.warning("--seed %d overrides seed=%s from %s", seed, mapping["seed"], path)
    mapping["seed"] = str(seed)
    return mapping


def cmd_gen_data(args) -> int:
    cfg = DatasetConfig.from_mapping(_config_mapping(args.config, args.seed))
    root = build_dataset(cfg, args.out)
    rows = read_manifest(root)
    n_train = sum(1 for r in rows if r[2] == "train")
    print(f"{len(rows)} samples ({n_train} train, {len(rows) - n_train} test) in {root}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = TrainConfig.from_mapping(_config_mapping(args.config, args.seed))
    if args.stage == "conditional" and args.base is None:
        raise UsageError("--stage conditional needs --base CHECKPOINT")
    if not Path(args.data, "manifest.tsv").is_file():
        raise FileNotFoundError(f"no dataset manifest under {args.data}")
    losses = train_stage(args.stage, args.data, cfg, args.out, args.base)
    if losses:
        print(f"trained {args.stage} for {len(losses)} steps; loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    else:
        print(f"wrote untrained {args.stage} checkpoint")
    return EXIT_OK


# -- sample / render -----------------------------------------------------------

def _condition_meta(args) -> dict:
    looks = args.appearance.split("+")
    actors = args.actors or len(looks)
    if actors not in (1, 2):
        raise ConfigurationError(f"--actors must be 1 or 2, got {actors}")
    if len(looks) < actors:
        looks = looks + looks[-1:] * (actors - len(looks))
    if len(looks) != actors:
        raise ConfigurationError(f"{len(looks)} appearances for {actors} actors")
    w, h = parse_resolution(args.resolution)
    meta = {"action": args.action, "scene": args.scene, "appearances": "+".join(looks),
            "camera": args.camera, "frames": args.frames, "resolution": f"{w}x{h}", "actors": actors,
            "n_splats": args.n_splats, "fps": 8.0}
    meta.update(sample_seeds(args.seed, 0))
    return meta


def render_condition(meta: dict, tpl=None) -> tuple[np.ndarray, str]:
    """Black-background avatar video and the caption for a condition description."""
    tpl = default_template() if tpl is None else tpl
    motion, splats, _, cams, looks = scene_setup(meta, tpl)
    colors, _ = render_sequence(tpl, motion, splats, cams)
    return colors, caption(meta["scene"], looks, meta["action"])


def _write_frames(directory: Path, prefix: str, video: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(video):
        write_ppm(directory / f"{prefix}_{k:03d}.ppm", to_uint8(frame))


def cmd_render(args) -> int:
    meta = _condition_meta(args)
    video, text = render_condition(meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / f"{args.name}.amgt", video)
    (out / f"{args.name}.txt").write_text(text + "\n")
    if args.ppm:
        _write_frames(out / args.name, "cond", video)
    print(f"rendered {len(video)} frames to {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    if checkpoint_kind(args.ckpt) not in ("base", "adapter"):
        raise ContractError(f"{args.ckpt} is not a checkpoint")
    net = load_checkpoint(args.ckpt)
    T = int(read_config(Path(args.ckpt) / "training_state.txt").get("train_T", 100))
    if not 1 <= args.ddim_steps <= T:
        raise ConfigurationError(f"--ddim-steps must lie in [1, {T}]")
    meta = _condition_meta(args)
    condition, text = render_condition(meta)
    z_a = video_to_latent(condition)
    text_emb = EmbedVocab().embed_text(text)
    conditional = net.conv_in.expanded
    _, video = ddim_sample(net, make_schedule(T), args.ddim_steps, z_a if conditional else None, text_emb,
                           w=args.guidance, seed=args.seed, shape=z_a.shape)
    out = Path(args.out)
    for sub in ("generated", "condition", "captions"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    save_tensor(out / "generated" / f"{args.name}.amgt", video)
    save_tensor(out / "condition" / f"{args.name}.amgt", condition)
    (out / "captions" / f"{args.name}.txt").write_text(text + "\n")
    if args.ppm:
        _write_frames(out / "frames" / args.name, "gen", video)
        _write_frames(out / "frames" / args.name, "cond", condition)
    kind = "conditional" if conditional else "base"
    print(f"sampled {args.name} with the {kind} model: {text}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def _videos(directory) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return {p.stem: p for p in sorted(d.glob("*.amgt"))}


def evaluate(generated_dir, condition_dir, captions_dir, grid_stride: int = 4, window: int = 2) -> list[tuple]:
    """(name, clip_style_score, motion_fidelity) for every aligned pair."""
    gen, cond = _videos(generated_dir), _videos(condition_dir)
    if not gen:
        raise UsageError(f"no generated videos in {generated_dir}")
    if set(gen) != set(cond):
        only_gen, only_cond = sorted(set(gen) - set(cond)), sorted(set(cond) - set(gen))
        raise UsageError(f"unaligned samples; only generated: {only_gen}; only condition: {only_cond}")
    vocab = EmbedVocab()
    rows = []
    for name in sorted(gen):
        video, condition = load_tensor(gen[name]), load_tensor(cond[name])
        if video.shape != condition.shape:
            raise DimensionError(f"{name}: generated {video.shape} vs condition {condition.shape}")
        text = (Path(captions_dir) / f"{name}.txt").read_text().strip()
        rows.append((name, clip_style_video_score(video, text, vocab),
                     video_motion_fidelity(video, condition, grid_stride, window)))
    return rows


def format_report(rows) -> str:
    lines = [f"{name}\tclip_style_score={c:.4f}\tmotion_fidelity={m:.4f}" for name, c, m in rows]
    mean_c = float(np.mean([r[1] for r in rows]))
    mean_m = float(np.mean([r[2] for r in rows]))
    lines.append(f"mean\tclip_style_score={mean_c:.4f}\tmotion_fidelity={mean_m:.4f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    captions = args.captions or Path(args.generated).parent / "captions"
    rows = evaluate(args.generated, args.conditions, captions, args.grid_stride, args.window)
    report = format_report(rows)
    Path(args.out).write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def _add_condition_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--action", default="walk")
    p.add_argument("--appearance", default="man_white_shirt", help="look id, or two joined by '+'")
    p.add_argument("--actors", type=int, default=0, help="1 or 2 (default: number of looks)")
    p.add_argument("--scene", default="park", help="scene id used for the caption")
    p.add_argument("--camera", default="static", help="trajectory spec, e.g. orbit:360 or zoom_in")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--resolution", default="32")
    p.add_argument("--n-splats", type=int, default=600)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--name", default="sample")
    p.add_argument("--ppm", action="store_true", help="also write PPM frames")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="build a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the base or the conditional model")
    p.add_argument("--data", required=True)
    p.add_argument("--stage", choices=("base", "conditional"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--base", help="base checkpoint (conditional stage)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="render a condition video and sample from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--ddim-steps", type=int, default=20)
    _add_condition_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("render", help="render a condition video only")
    _add_condition_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score generated videos against their conditions")
    p.add_argument("--generated", required=True)
    p.add_argument("--conditions", required=True)
    p.add_argument("--captions", help="directory of <name>.txt captions (default: ../captions)")
    p.add_argument("--grid-stride", type=int, default=4)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"unreadable file: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ConfigurationError, ContractError, DimensionError, DegeneracyError,
            BehindCameraError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
