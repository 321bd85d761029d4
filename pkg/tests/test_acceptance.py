"""
Long-running checks against the reference behaviour of the cavity and the
desk-scale model comparison. Run with FSILAB_SLOW=1.
"""

import numpy as np
import pytest

from cli import Layout, main
from eval_report import field_statistics
from ibm_solver import SolverConfig, disc_motion_summary, run_simulation, statistics_cross_check
from train_log import TrainingSession

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def default_run():
    return run_simulation(SolverConfig())


def test_disc_circles_the_primary_vortex(default_run):
    summary = disc_motion_summary(default_run)
    assert summary["cumulative_angle"] > 2.0 * np.pi
    assert summary["markers_in_unit_square"]
    assert summary["max_shape_deviation"] < 0.05
    assert default_run.metadata["max_divergence"] <= 1e-8


def test_fluid_statistics_are_close_to_the_reference(default_run):
    stats = field_statistics(default_run)
    fluid_std = {name: stats[("fluid", name)]["std"] for name in ("u", "v", "p")}
    assert 0.208 / 2 <= fluid_std["u"] <= 0.208 * 2
    warnings = statistics_cross_check(fluid_std)
    assert not any(w.startswith("fluid u std") and "factor" in w for w in warnings)


@pytest.fixture(scope="module")
def desk_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    common = ["--output-dir", str(out)]
    assert main(["generate", *common, "--grid", "50", "--t-end", "4"]) == 0
    assert main(["train", *common, "--desk-scale", "--seeds", "0,1,2", "--workers", "3"]) == 0
    assert main(["evaluate", *common]) == 0
    assert main(["report", *common]) == 0
    return Layout(out)


def test_desk_scale_ordering(desk_pipeline):
    verdicts = dict(line.split(": ") for line in (desk_pipeline.report / "verdicts.txt").read_text().splitlines())
    assert verdicts["EL<Single"] == "pass"
    assert verdicts["BSpline<Tanh"] == "pass"
    assert verdicts["Pressure>Velocity"] == "pass"


def test_desk_scale_training_reduces_the_loss_tenfold(desk_pipeline):
    for seed in (0, 1, 2):
        report = TrainingSession.load_session(desk_pipeline.reports / f"M1_seed{seed}.json")
        assert report.status == "completed"
        assert report.initial_loss >= 10.0 * report.final_loss
