"""Two-stage training loop and checkpoints.

Stage ``base`` fits the text-conditioned denoiser on the dataset's train split,
replacing captions by the learned null embedding with probability
``text_drop`` so the sampler can apply classifier-free guidance.  Stage
``conditional`` freezes that model, attaches adapters, expands the first layer
and fits the condition-aware objective.

A base checkpoint is ``model.amgt`` plus ``training_state.txt``.  A
conditional checkpoint stores the frozen base tensors (``base.amgt``), the
trainable tensors (``adapter.amgt``) and a state file that records the base
file's sha256, so re-attachment is exact and verifiable.
"""

from __future__ import annotations

import logging
from dataclasses import fields
from pathlib import Path
from typing import TextIO

import numpy as np

from .autodiff.io import file_sha256, load_archive, save_archive
from .autodiff.optim import Adam
from .autodiff.tensor import ContractError, NumericError, backward
from .config import TrainConfig, format_config, read_config
from .data import load_sample, split_dirs
from .diffusion import DenoiserNet, NetConfig, TrainItem, make_schedule, q_sample, training_loss, video_to_latent
from .diffusion.net import draw_noise
from .lora import ADAPTER_FILE, STATE_FILE, load_adapter, make_conditional, save_adapter
from .metrics import EmbedVocab

log = logging.getLogger(__name__)

MODEL_FILE = "model.amgt"
BASE_FILE = "base.amgt"
STAGES = ("base", "conditional")


# -- data -----------------------------------------------------------------------

def sample_item(sample, vocab: EmbedVocab) -> TrainItem:
    """Latents of a dataset sample: the composited video, its caption and the avatar condition."""
    return TrainItem(z=video_to_latent(sample.video), text_emb=vocab.embed_text(sample.caption),
                     z_a=video_to_latent(sample.avatar))


def dataset_items(root, vocab: EmbedVocab, split: str = "train", max_samples: int = 0) -> list[TrainItem]:
    dirs = split_dirs(root, split)
    if max_samples:
        dirs = dirs[:max_samples]
    if not dirs:
        raise ContractError(f"dataset {root} has no {split!r} samples")
    return [sample_item(load_sample(d), vocab) for d in dirs]


# -- optimisation -----------------------------------------------------------------

def fit(net, items, steps: int, lr: float, seed: int, T: int = 100, batch_size: int = 1,
        text_drop: float = 0.0, conditional: bool = False, log_every: int = 10,
        log_file: TextIO | None = None) -> list[float]:
    """Adam on the denoising objective; returns the loss of every step.

    Each step draws ``batch_size`` items with replacement, then the (t, ε)
    pairs and the caption drops, all from one generator seeded by ``seed``.
    """
    schedule = make_schedule(T)
    rng = np.random.default_rng(seed)
    opt = Adam([p for _, p in net.trainable()], lr=lr)
    losses = []
    for step in range(1, steps + 1):
        batch = [items[i] for i in rng.integers(0, len(items), size=batch_size)]
        opt.zero_grad()
        loss = training_loss(net, batch, schedule, rng=rng, text_drop=text_drop, conditional=conditional)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"loss became {value} at step {step}")
        backward(loss)
        opt.step()
        losses.append(value)
        if step % log_every == 0 or step == steps:
            window = losses[-log_every:]
            line = f"step={step}\tloss={value:.6f}\tmean={np.mean(window):.6f}"
            log.info(line)
            if log_file is not None:
                log_file.write(line + "\n")
    return losses


def init_equivalence(base, cond, item: TrainItem, seed: int = 0, T: int = 100) -> bool:
    """True when the fresh conditional model reproduces the base output bit for bit."""
    schedule = make_schedule(T)
    rng = np.random.default_rng(seed)
    (t, eps), = draw_noise(rng, [item], schedule)
    z_t = q_sample(item.z, t, eps, schedule)
    out_base = base.predict(z_t, t, item.text_emb)
    out_cond = cond.predict(z_t, t, item.text_emb, item.z_a)
    return np.array_equal(out_base, out_cond)


# -- checkpoints -----------------------------------------------------------------

def _net_state(net) -> dict:
    return {f"net_{k}": v for k, v in net.config_dict().items()}


def _net_config(state: dict) -> NetConfig:
    kw = {}
    for f in fields(NetConfig):
        key = f"net_{f.name}"
        if key not in state:
            raise ContractError(f"checkpoint state lacks {key!r}")
        kw[f.name] = int(state[key])
    return NetConfig(**kw)


def save_checkpoint(net, directory, extra: dict | None = None, base_sha256: str | None = None) -> str:
    """Write a base or conditional checkpoint; returns the sha256 of its main tensor file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {**_net_state(net), **(extra or {})}
    if not net.conv_in.expanded:
        digest = save_archive(d / MODEL_FILE, net.state_dict())
        (d / STATE_FILE).write_text(format_config({"kind": "base", **meta}))
        return digest
    frozen = {name: p.data for name, p in net.named_parameters() if not p.requires_grad}
    digest = save_archive(d / BASE_FILE, frozen)
    if base_sha256 is not None and digest != base_sha256:
        raise ContractError("frozen tensors no longer match the base checkpoint")
    save_adapter(net, d, digest, meta)
    return file_sha256(d / ADAPTER_FILE)


def checkpoint_kind(directory) -> str:
    return read_config(Path(directory) / STATE_FILE)["kind"]


def load_checkpoint(directory):
    """Rebuild the network stored in ``directory`` (base or conditional)."""
    d = Path(directory)
    state = read_config(d / STATE_FILE)
    net = DenoiserNet(_net_config(state))
    kind = state.get("kind")
    if kind == "base":
        net.load_state_dict(load_archive(d / MODEL_FILE))
        return net
    if kind == "adapter":
        net.load_state_dict(load_archive(d / BASE_FILE))
        net.freeze()
        return load_adapter(net, d, file_sha256(d / BASE_FILE))
    raise ContractError(f"unknown checkpoint kind {kind!r}")


def base_digest(directory) -> str:
    """sha256 of the frozen base tensors behind any checkpoint."""
    d = Path(directory)
    return file_sha256(d / (MODEL_FILE if checkpoint_kind(d) == "base" else BASE_FILE))


# -- stages -----------------------------------------------------------------------

def train_stage(stage: str, data_dir, cfg: TrainConfig, out_dir, base_ckpt=None) -> list[float]:
    """Run one training stage end to end and write its checkpoint and loss log."""
    if stage not in STAGES:
        raise ContractError(f"stage must be one of {STAGES}, got {stage!r}")
    vocab = EmbedVocab()
    items = dataset_items(data_dir, vocab, "train", cfg.max_samples)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {f"train_{k}": v for k, v in cfg.as_mapping().items()}
    extra["train_samples"] = len(items)
    with open(out / "loss_log.txt", "w") as log_file:
        if stage == "base":
            net = DenoiserNet(NetConfig(channels=cfg.channels, emb_dim=cfg.emb_dim, text_dim=vocab.dim,
                                        seed=cfg.seed))
            losses = fit(net, items, cfg.steps, cfg.lr, cfg.seed, cfg.T, cfg.batch_size, cfg.text_drop,
                         conditional=False, log_every=cfg.log_every, log_file=log_file)
            save_checkpoint(net, out, extra)
            return losses
        if base_ckpt is None:
            raise ContractError("the conditional stage needs a base checkpoint")
        if checkpoint_kind(base_ckpt) != "base":
            raise ContractError(f"{base_ckpt} is not a base checkpoint")
        base = load_checkpoint(base_ckpt)
        digest = base_digest(base_ckpt)
        net = make_conditional(base, cfg.lora_rank, cfg.lora_scale, seed=cfg.seed)
        ok = init_equivalence(base, net, items[0], seed=cfg.seed, T=cfg.T)
        log_file.write(f"init_equivalence={'pass' if ok else 'FAIL'}\n")
        if not ok:
            raise ContractError("conditional model does not reproduce the base output at step 0")
        log.info("step-0 check passed: conditional output equals base output")
        losses = fit(net, items, cfg.steps, cfg.lr, cfg.seed, cfg.T, cfg.batch_size, cfg.text_drop,
                     conditional=True, log_every=cfg.log_every, log_file=log_file)
        save_checkpoint(net, out, extra, base_sha256=digest)
        return losses
