import numpy as np
import pytest

from amgen.autodiff.io import file_sha256
from amgen.autodiff.tensor import ContractError
from amgen.config import DatasetConfig, TrainConfig
from amgen.data import build_dataset
from amgen.diffusion import DenoiserNet, NetConfig, TrainItem
from amgen.lora import make_conditional
from amgen.train import (
    base_digest,
    checkpoint_kind,
    fit,
    init_equivalence,
    load_checkpoint,
    save_checkpoint,
    train_stage,
)

TINY = NetConfig(channels=8, emb_dim=8, text_dim=8, groups=2, n_blocks=1, seed=2)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    cfg = DatasetConfig(actions=("walk", "jump"), scenes=("park",), appearances=("man_white_shirt",),
                        cameras=("static",), samples_per_combo=2, seed=4, frames=4, resolution=(16, 16),
                        n_splats=150)
    return build_dataset(cfg, tmp_path_factory.mktemp("data") / "d")


def _items(seed=0):
    rng = np.random.default_rng(seed)
    return [TrainItem(rng.standard_normal((2, 4, 4, 12)) * 0.5, rng.standard_normal(8), rng.standard_normal((2, 4, 4, 12)))
            for _ in range(2)]


def test_fit_reduces_loss_and_is_deterministic():
    a, b = DenoiserNet(TINY), DenoiserNet(TINY)
    la = fit(a, _items(), 40, 5e-3, seed=1, T=20)
    lb = fit(b, _items(), 40, 5e-3, seed=1, T=20)
    assert la == lb
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert np.mean(la[-10:]) < np.mean(la[:10])


def test_checkpoint_roundtrip(tmp_path):
    net = DenoiserNet(TINY)
    fit(net, _items(), 3, 1e-2, seed=0, T=20)
    digest = save_checkpoint(net, tmp_path / "base", {"note": "x"})
    assert digest == file_sha256(tmp_path / "base" / "model.amgt") == base_digest(tmp_path / "base")
    back = load_checkpoint(tmp_path / "base")
    assert checkpoint_kind(tmp_path / "base") == "base"
    z = np.random.default_rng(0).standard_normal((2, 4, 4, 12))
    assert np.array_equal(net.predict(z, 4, None), back.predict(z, 4, None))

    cond = make_conditional(back, rank=2, seed=1)
    fit(cond, _items(), 3, 1e-2, seed=0, T=20, conditional=True)
    save_checkpoint(cond, tmp_path / "cond", base_sha256=digest)
    # the frozen tensors written with the adapter are byte-identical to the base checkpoint
    assert base_digest(tmp_path / "cond") == digest
    again = load_checkpoint(tmp_path / "cond")
    za = np.random.default_rng(1).standard_normal(z.shape)
    assert np.array_equal(cond.predict(z, 4, None, za), again.predict(z, 4, None, za))


def test_tampered_base_is_rejected(tmp_path):
    net = DenoiserNet(TINY)
    save_checkpoint(make_conditional(net), tmp_path / "c")
    state = tmp_path / "c" / "training_state.txt"
    state.write_text(state.read_text().replace("base_sha256=", "base_sha256=0"))
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path / "c")


def test_init_equivalence_helper():
    net = DenoiserNet(TINY)
    assert init_equivalence(net, make_conditional(net), _items()[0])


def test_two_stage_pipeline(tmp_path, dataset):
    cfg = TrainConfig(steps=3, seed=0, log_every=1)
    losses = train_stage("base", dataset, cfg, tmp_path / "base")
    assert len(losses) == 3 and all(np.isfinite(losses))
    assert (tmp_path / "base" / "loss_log.txt").read_text().count("step=") == 3
    train_stage("conditional", dataset, cfg, tmp_path / "cond", tmp_path / "base")
    log = (tmp_path / "cond" / "loss_log.txt").read_text()
    assert log.startswith("init_equivalence=pass")
    net = load_checkpoint(tmp_path / "cond")
    assert net.conv_in.expanded and net._lora["rank"] == 4


def test_conditional_stage_needs_base(tmp_path, dataset):
    cfg = TrainConfig(steps=1, seed=0)
    with pytest.raises(ContractError):
        train_stage("conditional", dataset, cfg, tmp_path / "c")
    train_stage("base", dataset, cfg, tmp_path / "b")
    train_stage("conditional", dataset, cfg, tmp_path / "c", tmp_path / "b")
    with pytest.raises(ContractError):
        train_stage("conditional", dataset, cfg, tmp_path / "cc", tmp_path / "c")


def test_identical_seeds_identical_checkpoints(tmp_path, dataset):
    cfg = TrainConfig(steps=2, seed=3)
    train_stage("base", dataset, cfg, tmp_path / "a")
    train_stage("base", dataset, cfg, tmp_path / "b")
    for name in ("model.amgt", "training_state.txt", "loss_log.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
