import numpy as np
import pytest

from autodiff import Variable
from conftest import make_tiny_dataset
from eval_report import (
    DatasetReplay, emit_profiles, evaluate_model, field_statistics, load_checkpoint, ordering_verdicts,
    read_metrics, relative_l2, save_replay_checkpoint, write_field_statistics, write_loss_curves, write_metrics,
    write_verdicts,
)
from fsi_types import ConfigError, MissingInputError, NumericalError, Predictor
from train_log import TrainReport


class ZeroPredictor(Predictor):
    def forward(self, domain, inputs, bound=None):
        return Variable(np.zeros((inputs.shape[0], 3)))


def test_relative_l2_examples():
    assert relative_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_l2([0.0, 0.0], [3.0, 4.0]) == pytest.approx(100.0)
    assert relative_l2([3.0, 0.0], [3.0, 4.0]) == pytest.approx(80.0)


def test_relative_l2_rejects_bad_references():
    with pytest.raises(NumericalError):
        relative_l2([1.0], [0.0])
    with pytest.raises(ConfigError):
        relative_l2([1.0, 2.0], [1.0])


def test_relative_l2_is_scale_invariant_and_bounded():
    rng = np.random.default_rng(0)
    ref, pred = rng.normal(size=50), rng.normal(size=50)
    assert relative_l2(3.0 * pred, 3.0 * ref) == pytest.approx(relative_l2(pred, ref))
    bound = 100.0 * (np.linalg.norm(pred) + np.linalg.norm(ref)) / np.linalg.norm(ref)
    assert relative_l2(pred, ref) <= bound


def test_replay_scores_zero_error(tiny_dataset):
    result = evaluate_model(DatasetReplay(tiny_dataset), tiny_dataset)
    for domain in ("fluid", "interface"):
        for name in ("u", "v", "p"):
            assert result.metrics[domain][name] < 1e-10
    assert result.error_grid.shape == tiny_dataset.u.shape + (3,)


def test_zero_predictor_scores_one_hundred_percent(tiny_dataset):
    result = evaluate_model(ZeroPredictor(), tiny_dataset)
    for domain in ("fluid", "interface"):
        for name in ("u", "v", "p"):
            assert result.metrics[domain][name] == pytest.approx(100.0)


def test_replay_walls_and_lid(tiny_dataset):
    replay = DatasetReplay(tiny_dataset)
    coords = np.array([[0.5, 0.3, 1.0], [0.5, 0.0, 0.4], [0.5, 0.6, 0.0], [0.5, 1.0, 0.7]])
    values = replay.values("fluid", coords)
    assert np.allclose(values[0, :2], [1.0, 0.0])
    assert np.all(values[1:, :2] == 0.0)


def test_evaluation_requires_an_interface(tiny_dataset):
    empty = make_tiny_dataset(markers=0)
    with pytest.raises(MissingInputError):
        evaluate_model(ZeroPredictor(), empty)


def test_metrics_round_trip(tiny_dataset, tmp_path):
    results = {"M1_seed0": evaluate_model(ZeroPredictor(), tiny_dataset),
               "M1_seed1": evaluate_model(DatasetReplay(tiny_dataset), tiny_dataset)}
    path = write_metrics(results, tmp_path / "metrics.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "model,domain,field,rel_l2_percent"
    assert len(lines) == 13
    metrics = read_metrics(path)
    assert metrics["M1_seed0"]["interface"]["p"] == pytest.approx(100.0)


def test_field_statistics_of_known_values(tmp_path):
    dataset = make_tiny_dataset()
    dataset.in_fluid[:] = True
    dataset.u[:] = 0.7
    dataset.v[:] = np.where(np.arange(dataset.v.size).reshape(dataset.v.shape) % 2 == 0, -1.0, 1.0)
    stats = field_statistics(dataset)
    assert stats[("fluid", "u")]["std"] == pytest.approx(0.0, abs=1e-15)
    assert stats[("fluid", "v")]["std"] == pytest.approx(1.0, rel=1e-12)
    assert stats[("fluid", "p")]["counts"].sum() == dataset.in_fluid.sum()
    path = write_field_statistics(stats, tmp_path / "stats.csv")
    assert path.read_text().splitlines()[0] == "domain,field,std,bin_lo,bin_hi,count"


def test_profiles_of_the_replay_match_the_reference(tiny_dataset, tmp_path):
    written = emit_profiles(DatasetReplay(tiny_dataset), tiny_dataset, tmp_path, "replay",
                            times=[0.5], y_lines=[0.5])
    names = sorted(p.name for p in written)
    assert "replay_fluid_uvp_profile-t0.5-y0.5.csv" in names
    assert "replay_fluid_p_contour-t1.csv" in names
    table = np.loadtxt(tmp_path / "replay_fluid_uvp_profile-t0.5-y0.5.csv", delimiter=",", skiprows=1)
    assert table.shape == (len(tiny_dataset.x), 7)
    assert np.allclose(table[:, 1], table[:, 2]) and np.allclose(table[:, 5], table[:, 6])


def test_profiles_reject_lines_off_the_grid_and_missing_times(tiny_dataset, tmp_path):
    with pytest.raises(ConfigError):
        emit_profiles(ZeroPredictor(), tiny_dataset, tmp_path, "zero", times=[0.5], y_lines=[1.2])
    with pytest.raises(MissingInputError):
        emit_profiles(ZeroPredictor(), tiny_dataset, tmp_path, "zero", times=[0.25], y_lines=[0.5])


def _metrics(fluid_u, interface_u, pressure=50.0):
    return {"fluid": {"u": fluid_u, "v": fluid_u, "p": pressure},
            "interface": {"u": interface_u, "v": interface_u, "p": pressure}}


def test_ordering_verdicts():
    metrics = {
        ("M1", 0): _metrics(10.0, 20.0), ("M1", 1): _metrics(10.0, 20.0),
        ("M3", 0): _metrics(10.0, 5.0), ("M3", 1): _metrics(10.0, 30.0),
        ("M2", 0): _metrics(10.0, 20.0), ("M4", 0): _metrics(10.0, 5.0),
    }
    losses = {("M1", 0): 1.0, ("M1", 1): 1.0, ("M2", 0): 0.5, ("M3", 0): 0.4, ("M3", 1): 0.4, ("M4", 0): 0.1}
    verdicts = ordering_verdicts(metrics, losses)
    # M3 beats M1 on one of two seeds, which is not a strict majority
    assert verdicts["EL<Single"] == "fail"
    assert verdicts["BSpline<Tanh"] == "pass"
    assert verdicts["Pressure>Velocity"] == "pass"


def test_verdicts_without_pairs_are_not_applicable(tmp_path):
    verdicts = ordering_verdicts({("M1", 0): _metrics(10.0, 20.0, pressure=5.0)}, {})
    assert verdicts["EL<Single"] == "n/a" and verdicts["BSpline<Tanh"] == "n/a"
    assert verdicts["Pressure>Velocity"] == "fail"
    path = write_verdicts(verdicts, tmp_path / "verdicts.txt")
    assert path.read_text().splitlines()[0] == "EL<Single: n/a"


def test_loss_curves_are_long_form(tmp_path):
    report = TrainReport("M1_seed0", "M1", "SingleFSI", "tanh", 0, 2,
                         history=[{"iter": 0, "total": 2.0}, {"iter": 2, "total": 0.5}])
    lines = write_loss_curves([report], tmp_path / "curves.csv").read_text().splitlines()
    assert lines == ["run,iter,total", "M1_seed0,0,2.0", "M1_seed0,2,0.5"]


def test_replay_checkpoint_loads_as_a_predictor(tiny_dataset, tmp_path):
    dataset_path = tiny_dataset.save(tmp_path / "dataset.npz")
    checkpoint = save_replay_checkpoint(tmp_path / "checkpoints" / "replay_seed0.npz", dataset_path)
    predictor = load_checkpoint(checkpoint)
    assert isinstance(predictor, DatasetReplay)
    assert evaluate_model(predictor, tiny_dataset).metrics["fluid"]["u"] < 1e-10
    with pytest.raises(MissingInputError):
        load_checkpoint(tmp_path / "missing.npz")
