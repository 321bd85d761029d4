from pathlib import Path

import numpy as np

from cli import Layout, main
from eval_report import read_metrics, save_replay_checkpoint
from fsi_types import FsiDataset

SHORT = ["--grid", "16", "--t-end", "0.05", "--markers", "40"]
SMALL_SET = ["--fluid-fraction", "0.05", "--interface-fraction", "0.05",
             "--boundary-points", "32", "--initial-points", "32"]


def _run(command, out, *extra):
    return main([command, "--output-dir", str(out), *extra])


def _generate(out):
    assert _run("generate", out, *SHORT) == 0
    return Layout(out)


def test_generate_writes_the_dataset(tmp_path):
    layout = _generate(tmp_path)
    dataset = FsiDataset.load(layout.dataset)
    assert dataset.u.shape == (6, 16, 16)
    assert dataset.n_markers == 40
    for name in ("dataset_metadata.json", "field_statistics.csv", "disc_motion.json"):
        assert (layout.data / name).exists()
    assert (tmp_path / "resolved_config_generate.txt").exists()


def test_existing_outputs_need_force(tmp_path):
    _generate(tmp_path)
    assert _run("generate", tmp_path, *SHORT) == 2
    assert _run("generate", tmp_path, *SHORT, "--force") == 0


def test_missing_inputs_exit_with_code_four(tmp_path):
    assert _run("train", tmp_path, *SMALL_SET) == 4
    assert _run("evaluate", tmp_path) == 4
    assert _run("report", tmp_path) == 4


def test_unknown_keys_exit_with_code_two(tmp_path):
    assert _run("generate", tmp_path, "--gird", "16") == 2


def test_full_pipeline_at_desk_scale(tmp_path):
    layout = _generate(tmp_path)
    assert _run("train", tmp_path, *SMALL_SET, "--iterations", "0", "--desk-scale") == 0
    checkpoints = sorted(p.stem for p in layout.checkpoints.glob("*.npz"))
    assert checkpoints == ["M1_seed0", "M2_seed0", "M3_seed0", "M4_seed0"]
    assert layout.manifest.exists()
    assert (layout.training / "logs" / "M1_seed0.csv").exists()

    assert _run("evaluate", tmp_path) == 0
    assert len(layout.metrics.read_text().splitlines()) == 1 + 24
    assert any((layout.eval / "profiles").glob("M4_seed0_fluid_uvp_profile-t0-y*.csv"))

    assert _run("report", tmp_path) == 0
    comparison = (layout.report / "comparison.csv").read_text().splitlines()
    assert comparison[0] == "model,domain,field,rel_l2_percent"
    assert len(comparison) == 1 + 24
    verdicts = (layout.report / "verdicts.txt").read_text().splitlines()
    assert [line.split(":")[0] for line in verdicts] == ["EL<Single", "BSpline<Tanh", "Pressure>Velocity"]
    assert "Relative L2 Error" in (layout.report / "report.md").read_text()


def test_replay_checkpoint_evaluates_to_zero_and_reruns_identically(tmp_path):
    layout = _generate(tmp_path)
    save_replay_checkpoint(layout.checkpoints / "replay_seed0.npz", layout.dataset)
    assert _run("evaluate", tmp_path) == 0
    first = layout.metrics.read_bytes()
    values = [value for domain in read_metrics(layout.metrics)["replay_seed0"].values() for value in domain.values()]
    assert len(values) == 6 and np.max(values) < 1e-10

    assert _run("evaluate", tmp_path) == 2
    assert _run("evaluate", tmp_path, "--force") == 0
    assert layout.metrics.read_bytes() == first


def test_config_file_is_read(tmp_path):
    config = Path(tmp_path) / "short.cfg"
    config.write_text(f"output_dir = {tmp_path / 'out'}\ngrid = 16\nt_end = 0.05\nmarkers = 40\nwith_disc = true\n")
    assert main(["generate", "--config", str(config)]) == 0
    assert (tmp_path / "out" / "data" / "dataset.npz").exists()
