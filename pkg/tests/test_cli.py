from collections import deque

import numpy as np
import pytest

from amgen.autodiff.io import load_archive, load_tensor, save_archive, save_tensor
from amgen.cli import main
from amgen.data import read_manifest

DATA_CFG = """\
actions=walk, jump
scenes=park, beach
appearances=man_white_shirt, woman_red_top
cameras=static, orbit:90
samples_per_combo=4
seed=1
frames=2
resolution=8
n_splats=40
"""


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _components(mask: np.ndarray) -> int:
    seen = np.zeros_like(mask)
    count = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        queue = deque([start])
        seen[start] = True
        while queue:
            y, x = queue.popleft()
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                q = (y + dy, x + dx)
                if 0 <= q[0] < mask.shape[0] and 0 <= q[1] < mask.shape[1] and mask[q] and not seen[q]:
                    seen[q] = True
                    queue.append(q)
    return count


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "data.cfg").write_text(DATA_CFG.replace("samples_per_combo=4", "samples_per_combo=1")
                                   .replace("frames=2", "frames=4").replace("resolution=8", "resolution=16"))
    (root / "train.cfg").write_text("steps=2\nseed=0\nlog_every=1\n")
    assert main(["gen-data", "--config", str(root / "data.cfg"), "--out", str(root / "data"), "--seed", "1"]) == 0
    assert main(["train", "--data", str(root / "data"), "--stage", "base", "--config", str(root / "train.cfg"),
                 "--out", str(root / "base"), "--seed", "0"]) == 0
    assert main(["train", "--data", str(root / "data"), "--stage", "conditional", "--config",
                 str(root / "train.cfg"), "--base", str(root / "base"), "--out", str(root / "cond"),
                 "--seed", "0"]) == 0
    return root


# -- gen-data -----------------------------------------------------------------------

def test_gen_data_counts_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(DATA_CFG)
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert "64 samples" in capsys.readouterr().out
    assert len(read_manifest(tmp_path / "a")) == 64
    assert len([p for p in (tmp_path / "a").iterdir() if p.is_dir()]) == 64
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "1"]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_gen_data_missing_key(tmp_path, capsys):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(DATA_CFG.replace("scenes=park, beach\n", ""))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"]) == 1
    assert "scenes" in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--config", "x", "--out", str(tmp_path)])
    assert exc.value.code == 1


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "a"),
                 "--seed", "1"]) == 2


# -- train ---------------------------------------------------------------------------

def test_train_outputs(workspace):
    log = (workspace / "cond" / "loss_log.txt").read_text()
    assert log.splitlines()[0] == "init_equivalence=pass"
    assert (workspace / "base" / "model.amgt").is_file()
    assert (workspace / "cond" / "adapter.amgt").is_file()


def test_train_errors(workspace, tmp_path):
    cfg = str(workspace / "train.cfg")
    assert main(["train", "--data", str(tmp_path / "nothing"), "--stage", "base", "--config", cfg,
                 "--out", str(tmp_path / "o"), "--seed", "0"]) == 2
    assert main(["train", "--data", str(workspace / "data"), "--stage", "conditional", "--config", cfg,
                 "--out", str(tmp_path / "o"), "--seed", "0"]) == 1
    assert main(["train", "--data", str(workspace / "data"), "--stage", "conditional", "--config", cfg,
                 "--base", str(tmp_path / "missing"), "--out", str(tmp_path / "o"), "--seed", "0"]) == 2


# -- sample / render ----------------------------------------------------------------------

def _sample(workspace, out, *extra, ckpt="cond"):
    return main(["sample", "--ckpt", str(workspace / ckpt), "--out", str(out), "--frames", "4",
                 "--resolution", "16", "--n-splats", "150", "--ddim-steps", "3", *extra])


def test_sample_is_deterministic(workspace, tmp_path):
    assert _sample(workspace, tmp_path / "a", "--seed", "5") == 0
    assert _sample(workspace, tmp_path / "b", "--seed", "5") == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    video = load_tensor(tmp_path / "a" / "generated" / "sample.amgt")
    assert video.shape == (4, 16, 16, 3) and 0 <= video.min() and video.max() <= 1
    assert _sample(workspace, tmp_path / "c", "--seed", "6") == 0
    assert _tree(tmp_path / "a") != _tree(tmp_path / "c")


def test_sample_base_checkpoint(workspace, tmp_path, capsys):
    assert _sample(workspace, tmp_path, "--seed", "1", ckpt="base") == 0
    assert "base model" in capsys.readouterr().out


def test_orbit_closes_loop(tmp_path):
    assert main(["render", "--camera", "orbit:360", "--frames", "9", "--action", "wave", "--resolution", "16",
                 "--n-splats", "200", "--seed", "0", "--out", str(tmp_path), "--ppm"]) == 0
    video = load_tensor(tmp_path / "sample.amgt")
    assert np.abs(video[0] - video[-1]).max() < 1e-5
    assert len(list((tmp_path / "sample").glob("cond_*.ppm"))) == 9


def test_two_actors_are_disjoint(workspace, tmp_path):
    assert _sample(workspace, tmp_path, "--seed", "2", "--actors", "2", "--appearance",
                   "man_white_shirt+woman_yellow_dress") == 0
    cond = load_tensor(tmp_path / "condition" / "sample.amgt")
    assert _components((cond[0] != 0).any(axis=-1)) == 2


def test_sample_bad_camera(workspace, tmp_path):
    assert _sample(workspace, tmp_path, "--seed", "1", "--camera", "fly:3") == 1


def test_sample_nan_weights(workspace, tmp_path):
    ckpt = tmp_path / "nan"
    ckpt.mkdir()
    state = load_archive(workspace / "base" / "model.amgt")
    state["conv_out"] = np.full_like(state["conv_out"], np.nan)
    save_archive(ckpt / "model.amgt", state)
    (ckpt / "training_state.txt").write_bytes((workspace / "base" / "training_state.txt").read_bytes())
    assert main(["sample", "--ckpt", str(ckpt), "--out", str(tmp_path / "o"), "--frames", "2",
                 "--resolution", "8", "--n-splats", "50", "--ddim-steps", "2", "--seed", "0"]) == 3


# -- eval -------------------------------------------------------------------------------

def _moving_video(seed):
    base = np.random.default_rng(seed).random((16, 16, 3))
    return np.stack([np.roll(base, k, axis=1) for k in range(4)])


def test_eval_report(tmp_path):
    for name in ("a", "b"):
        for sub in ("gen", "cond"):
            (tmp_path / sub).mkdir(exist_ok=True)
            save_tensor(tmp_path / sub / f"{name}.amgt", _moving_video(ord(name)))
        (tmp_path / "captions").mkdir(exist_ok=True)
        (tmp_path / "captions" / f"{name}.txt").write_text("a man walking in a park\n")
    report = tmp_path / "report.tsv"
    assert main(["eval", "--generated", str(tmp_path / "gen"), "--conditions", str(tmp_path / "cond"),
                 "--captions", str(tmp_path / "captions"), "--out", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 3 and lines[-1].startswith("mean\t")
    for line in lines:
        fields = dict(f.split("=") for f in line.split("\t")[1:])
        assert float(fields["motion_fidelity"]) == pytest.approx(100.0)


def test_eval_errors(tmp_path, capsys):
    (tmp_path / "gen").mkdir()
    (tmp_path / "cond").mkdir()
    args = ["eval", "--generated", str(tmp_path / "gen"), "--conditions", str(tmp_path / "cond"),
            "--out", str(tmp_path / "r.tsv")]
    assert main(args) != 0
    save_tensor(tmp_path / "gen" / "x.amgt", _moving_video(0))
    save_tensor(tmp_path / "cond" / "y.amgt", _moving_video(0))
    assert main(args) != 0
    err = capsys.readouterr().err
    assert "'x'" in err and "'y'" in err
