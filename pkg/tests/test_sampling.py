import dataclasses

import numpy as np
import pytest

from fsi_types import ConfigError, TrainingSet, WALLS
from sampling import (
    build_training_set, minibatch, read_manifest, sobol_points, star_discrepancy_estimate, write_manifest,
)


def _small_set(dataset, **overrides):
    options = dict(fluid_fraction=0.1, interface_fraction=0.25, boundary_points=16, initial_points=16, seed=0)
    options.update(overrides)
    return build_training_set(dataset, **options)


def test_sobol_skips_the_origin_by_default():
    points = sobol_points(3, 2)
    assert np.allclose(points[0], [0.5, 0.5])
    assert np.allclose(points[1], [0.75, 0.25])
    assert np.allclose(sobol_points(1, 2, skip_origin=False)[0], [0.0, 0.0])


def test_sobol_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        sobol_points(0, 2)
    with pytest.raises(ConfigError):
        sobol_points(4, 0)


def test_sobol_is_lower_discrepancy_than_random():
    sobol = star_discrepancy_estimate(sobol_points(1024, 2))
    random = star_discrepancy_estimate(np.random.default_rng(0).uniform(size=(1024, 2)))
    assert sobol < 0.01
    assert sobol < 0.5 * random


def test_collection_sizes_follow_fractions(tiny_dataset):
    training_set = _small_set(tiny_dataset)
    sizes = training_set.collections()
    assert sizes["collocation"] == round(0.1 * tiny_dataset.n_eulerian_records)
    assert sizes["interface"] == round(0.25 * tiny_dataset.n_marker_records)
    assert all(sizes[wall] == 16 for wall in WALLS)
    assert sizes["initial"] == 16


def test_zero_point_domains_are_rejected(tiny_dataset):
    with pytest.raises(ConfigError):
        _small_set(tiny_dataset, fluid_fraction=0.001)
    with pytest.raises(ConfigError):
        _small_set(tiny_dataset, interface_fraction=0.0)
    with pytest.raises(ConfigError):
        _small_set(tiny_dataset, boundary_points=0)


def test_collocation_points_lie_on_fluid_nodes(tiny_dataset):
    training_set = _small_set(tiny_dataset, fluid_fraction=0.3)
    points = training_set.collocation
    assert len(np.unique(points, axis=0)) == len(points)
    for t, x, y in points:
        k = tiny_dataset.time_index(t)
        i = int(np.argmin(np.abs(tiny_dataset.x - x)))
        j = int(np.argmin(np.abs(tiny_dataset.y - y)))
        assert tiny_dataset.in_fluid[k, j, i]


def test_wall_and_initial_points_sit_on_their_boundaries(tiny_dataset):
    training_set = _small_set(tiny_dataset)
    assert np.all(training_set.boundary["top"][:, 2] == 1.0)
    assert np.all(training_set.boundary["bottom"][:, 2] == 0.0)
    assert np.all(training_set.boundary["left"][:, 1] == 0.0)
    assert np.all(training_set.boundary["right"][:, 1] == 1.0)
    assert np.all(training_set.initial[:, 0] == 0.0)
    for wall in WALLS:
        t = training_set.boundary[wall][:, 0]
        assert t.min() >= 0.0 and t.max() <= tiny_dataset.times[-1]


def test_interface_targets_are_marker_records(tiny_dataset):
    training_set = _small_set(tiny_dataset)
    markers = tiny_dataset.marker_columns()
    for row, uv, p in zip(training_set.interface, training_set.interface_uv, training_set.interface_p):
        match = np.flatnonzero((markers["t"] == row[0]) & (markers["x"] == row[1]) & (markers["y"] == row[2]))
        assert len(match) == 1
        assert markers["u"][match[0]] == uv[0] and markers["v"][match[0]] == uv[1]
        assert markers["p"][match[0]] == p


def test_training_set_is_deterministic(tiny_dataset):
    first, second = _small_set(tiny_dataset, seed=3), _small_set(tiny_dataset, seed=3)
    assert np.array_equal(first.collocation, second.collocation)
    assert np.array_equal(first.interface, second.interface)
    assert first.provenance == second.provenance


def test_minibatch_is_keyed_by_seed_and_iteration(tiny_dataset):
    training_set = _small_set(tiny_dataset, fluid_fraction=0.5, boundary_points=64)
    a = minibatch(training_set, batch_size=8, seed=1, iteration=5)
    b = minibatch(training_set, batch_size=8, seed=1, iteration=5)
    c = minibatch(training_set, batch_size=8, seed=1, iteration=6)
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert any(not np.array_equal(a[name], c[name]) for name in a)
    for name, size in training_set.collections().items():
        assert len(a[name]) == min(8, size)
        assert len(np.unique(a[name])) == len(a[name])


def test_manifest_round_trip(tiny_dataset, tmp_path):
    training_set = _small_set(tiny_dataset)
    path = write_manifest(training_set, tmp_path / "training" / "manifest.txt")
    entries = read_manifest(path)
    assert entries["seed"] == "0"
    assert entries["dataset_checksum"] == tiny_dataset.checksum()
    assert int(entries["count_collocation"]) == len(training_set.collocation)


def _flat_training_set(collocation_size):
    one = np.zeros((1, 3))
    return TrainingSet(
        collocation=np.zeros((collocation_size, 3)),
        boundary={wall: one.copy() for wall in WALLS},
        initial=one.copy(),
        interface=one.copy(),
        interface_uv=np.zeros((1, 2)),
        interface_p=np.zeros(1),
        interface_normals=np.zeros((1, 2)),
    )


def test_minibatch_draws_every_point_equally_often():
    size, batch_size, iterations = 1000, 100, 100
    training_set = _flat_training_set(size)
    counts = np.zeros(size)
    for iteration in range(iterations):
        picks = minibatch(training_set, batch_size=batch_size, seed=7, iteration=iteration)["collocation"]
        assert len(np.unique(picks)) == batch_size
        np.add.at(counts, picks, 1)
    assert counts.sum() == batch_size * iterations
    expected = batch_size * iterations / size
    chi_square = float(np.sum((counts - expected) ** 2 / expected))
    dof = size - 1
    assert abs(chi_square - dof) < 4.0 * np.sqrt(2.0 * dof)


def test_full_fluid_fraction_without_a_disc_takes_every_record_once(tiny_dataset):
    open_cavity = dataclasses.replace(tiny_dataset, in_fluid=np.ones_like(tiny_dataset.in_fluid, dtype=bool))
    training_set = _small_set(open_cavity, fluid_fraction=1.0)
    points = training_set.collocation
    assert len(points) == open_cavity.n_eulerian_records
    assert len(np.unique(points, axis=0)) == len(points)
    t, x, y = np.meshgrid(open_cavity.times, open_cavity.x, open_cavity.y, indexing="ij")
    every_record = np.stack([t.ravel(), x.ravel(), y.ravel()], axis=1)
    assert np.array_equal(np.unique(points, axis=0), np.unique(every_record, axis=0))
