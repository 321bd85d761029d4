import numpy as np
import pytest

import autodiff as ad
from eval_report import DatasetReplay
from fsi_types import ConfigError, NumericalError
from nets import param_count
from pinn import (
    EL_WEIGHTS, PUBLISHED_PARAM_COUNTS, SINGLE_WEIGHTS, AdamOptimizer, AdamState, FsiModel, Trainer, adam_step,
    compute_loss, flow_derivatives, learning_rate, loss_single_fsi, model_config, residuals_navier_stokes,
)
from sampling import build_training_set


def _training_set(dataset):
    return build_training_set(dataset, fluid_fraction=0.1, interface_fraction=0.25,
                              boundary_points=16, initial_points=16, seed=0)


def _small(model_id, **overrides):
    widths = [3, 5, 3] if model_id in ("M1", "M3") else [3, 3, 3]
    options = dict(layer_widths=widths, iterations=3, batch_size=8, log_every=1)
    options.update(overrides)
    return model_config(model_id, **options)


def _loss(config, model, batch):
    with ad.Tape() as tape:
        bound = model.bind(tape)
        return compute_loss(config, model, batch, tape, bound)


def test_registry_defaults():
    m1, m4 = model_config("M1"), model_config("M4")
    assert m1.loss_weights == SINGLE_WEIGHTS and m4.loss_weights == EL_WEIGHTS
    assert m1.iterations == 60000 and m1.lr0 == 1e-3 and m1.batch_size == 128
    assert param_count(m1.network_spec()) == 182703
    assert PUBLISHED_PARAM_COUNTS["M1"] == 183305
    desk = model_config("M2", desk_scale=True)
    assert desk.layer_widths == [3, 24, 24, 24, 3] and desk.iterations == 5000


def test_invalid_model_configs_are_rejected():
    with pytest.raises(ConfigError):
        model_config("M9")
    with pytest.raises(ConfigError):
        model_config("M1", loss_weights=(1.0, 1.0))
    with pytest.raises(ConfigError):
        model_config("M3", loss_weights=(1.0, 1.0, 1.0, 1.0, 1.0, -1.0))


def test_constant_field_has_zero_residual():
    coords = np.random.default_rng(0).uniform(0, 1, size=(6, 3))
    with ad.Tape() as tape:
        d = flow_derivatives(lambda inputs: ad.Variable(np.tile([0.3, -0.2, 0.5], (6, 1))), coords, tape)
        r_u, r_v, r_c = residuals_navier_stokes(d)
    for r in (r_u, r_v, r_c):
        assert np.all(r.value == 0.0)


def test_stagnation_flow_residual():
    coords = np.array([[0.0, 0.5, 0.3], [1.0, 0.5, 0.8]])

    def forward(inputs):
        return ad.concat([inputs[:, 1:2], -inputs[:, 2:3], inputs[:, 0:1] * 0.0], axis=1)

    with ad.Tape() as tape:
        r_u, r_v, r_c = residuals_navier_stokes(flow_derivatives(forward, coords, tape))
    # u = x, v = -y: u u_x = x, v v_y = y
    assert np.allclose(r_u.value[:, 0], [0.5, 0.5])
    assert np.allclose(r_v.value[:, 0], [0.3, 0.8])
    assert np.allclose(r_c.value, 0.0)


def test_manufactured_solution_residuals():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 1, size=(10, 3))
    density, viscosity = 1.3, 0.02

    def forward(inputs):
        t, x, y = inputs[:, 0:1], inputs[:, 1:2], inputs[:, 2:3]
        u = ad.exp(-t) * ad.tanh(x) * y
        return ad.concat([u, x * y * y, x * y], axis=1)

    with ad.Tape() as tape:
        r_u, r_v, r_c = residuals_navier_stokes(flow_derivatives(forward, coords, tape), density, viscosity)

    t, x, y = coords[:, 0], coords[:, 1], coords[:, 2]
    decay, th = np.exp(-t), np.tanh(x)
    u, v = decay * th * y, x * y ** 2
    u_t, u_x, u_y = -u, decay * (1 - th ** 2) * y, decay * th
    u_xx = -2.0 * decay * th * (1 - th ** 2) * y
    v_x, v_y, v_yy = y ** 2, 2 * x * y, 2 * x
    expected_u = density * (u_t + u * u_x + v * u_y) + y - viscosity * u_xx
    expected_v = density * (u * v_x + v * v_y) + x - viscosity * v_yy
    assert np.allclose(r_u.value[:, 0], expected_u, rtol=1e-12, atol=1e-14)
    assert np.allclose(r_v.value[:, 0], expected_v, rtol=1e-12, atol=1e-14)
    assert np.allclose(r_c.value[:, 0], u_x + v_y, rtol=1e-12, atol=1e-14)


def test_zero_network_misses_the_lid_by_one(tiny_dataset):
    config = _small("M1")
    model = FsiModel.initialize(config)
    model.set_parameters({name: np.zeros_like(value) for name, value in model.parameters().items()})
    breakdown = _loss(config, model, _training_set(tiny_dataset).full_batch())
    assert breakdown.terms["up"] == 1.0
    assert breakdown.terms["bc1"] == 0.0 and breakdown.terms["ic"] == 0.0
    assert breakdown.terms["ru"] == 0.0


def test_replaying_the_dataset_fits_every_data_term(tiny_dataset):
    config = _small("M1")
    replay = DatasetReplay(tiny_dataset)
    with ad.Tape() as tape:
        breakdown = loss_single_fsi(config, replay, _training_set(tiny_dataset).full_batch(), tape)
    for name in ("up", "bc1", "ic", "xi_vel", "xi_dpdn", "ru", "rv", "rc"):
        assert breakdown.terms[name] < 1e-10


def test_loss_weights_scale_their_terms(tiny_dataset):
    batch = _training_set(tiny_dataset).full_batch()
    config = _small("M1")
    model = FsiModel.initialize(config)
    doubled = _small("M1", loss_weights=(0.1, 2.0, 8.0, 0.1))
    base, heavy = _loss(config, model, batch), _loss(doubled, model, batch)
    assert heavy.contributions["ic"] == pytest.approx(2.0 * base.contributions["ic"], rel=1e-12)
    assert heavy.contributions["up"] == pytest.approx(base.contributions["up"], rel=1e-12)


@pytest.mark.parametrize("model_id", ["M1", "M2", "M3", "M4"])
def test_decomposition_sums_to_the_total(tiny_dataset, model_id):
    config = _small(model_id)
    breakdown = _loss(config, FsiModel.initialize(config), _training_set(tiny_dataset).full_batch())
    total = float(breakdown.total.value)
    assert set(breakdown.contributions) == set(config.term_names())
    assert sum(breakdown.decomposition().values()) == pytest.approx(total, rel=1e-12)
    assert all(value >= 0.0 for value in breakdown.terms.values())


@pytest.mark.parametrize("model_id", ["M1", "M2", "M3", "M4"])
def test_gradients_match_finite_differences(tiny_dataset, model_id):
    config = _small(model_id)
    training_set = _training_set(tiny_dataset)
    batch = training_set.full_batch()
    trainer = Trainer(config, training_set)
    model = trainer.model
    rng = np.random.default_rng(7)
    model.set_parameters({name: rng.normal(scale=0.3, size=value.shape)
                          for name, value in model.parameters().items()})
    _, grads = trainer.loss(batch)
    base = {name: value.copy() for name, value in model.parameters().items()}
    eps = 1e-6
    for name, value in base.items():
        for _ in range(2):
            index = tuple(int(rng.integers(s)) for s in value.shape)
            values = []
            for sign in (1.0, -1.0):
                perturbed = value.copy()
                perturbed[index] += sign * eps
                model.set_parameters({name: perturbed})
                values.append(float(trainer.loss(batch, with_grads=False)[0].total.value))
            model.set_parameters({name: value})
            numeric = (values[0] - values[1]) / (2 * eps)
            assert grads[name][index] == pytest.approx(numeric, rel=1e-4, abs=1e-6), f"{name}{index}"


def _group_grads(config, model, batch, group, prefix):
    with ad.Tape() as tape:
        bound = model.bind(tape)
        breakdown = compute_loss(config, model, batch, tape, bound)
        names = [name for name in bound if name.startswith(prefix)]
        grads = ad.grad(breakdown.groups[group], [bound[name] for name in names])
    return {name: g.value for name, g in zip(names, grads)}


def test_only_the_coupling_term_reaches_both_networks(tiny_dataset):
    config = _small("M3")
    model = FsiModel.initialize(config)
    batch = _training_set(tiny_dataset).full_batch()
    assert all(np.all(g == 0.0) for g in _group_grads(config, model, batch, "eulerian", "lagrangian/").values())
    assert all(np.all(g == 0.0) for g in _group_grads(config, model, batch, "lagrangian", "eulerian/").values())
    coupling_lag = _group_grads(config, model, batch, "coupling", "lagrangian/")
    coupling_eul = _group_grads(config, model, batch, "coupling", "eulerian/")
    assert any(np.any(g != 0.0) for g in coupling_lag.values())
    assert any(np.any(g != 0.0) for g in coupling_eul.values())


def test_detached_coupling_only_trains_the_eulerian_network(tiny_dataset):
    config = _small("M3", detach_lagrangian_coupling=True)
    model = FsiModel.initialize(config)
    batch = _training_set(tiny_dataset).full_batch()
    coupling_lag = _group_grads(config, model, batch, "coupling", "lagrangian/")
    coupling_eul = _group_grads(config, model, batch, "coupling", "eulerian/")
    assert all(np.all(g == 0.0) for g in coupling_lag.values())
    assert any(np.any(g != 0.0) for g in coupling_eul.values())


def test_identical_networks_have_zero_coupling(tiny_dataset):
    config = _small("M4")
    model = FsiModel.initialize(config)
    params = model.parameters()
    model.set_parameters({name.replace("eulerian/", "lagrangian/"): value.copy()
                          for name, value in params.items() if name.startswith("eulerian/")})
    breakdown = _loss(config, model, _training_set(tiny_dataset).full_batch())
    assert breakdown.terms["coupling"] == 0.0


def test_interface_supervision_adds_a_term(tiny_dataset):
    config = _small("M3", el_interface_supervision=True)
    breakdown = _loss(config, FsiModel.initialize(config), _training_set(tiny_dataset).full_batch())
    assert "interface_vel" in breakdown.contributions
    assert "interface_vel" not in _small("M3").term_names()


def test_learning_rate_schedule():
    assert learning_rate(0) == 1e-3
    assert learning_rate(999) == 1e-3
    assert learning_rate(1000) == pytest.approx(0.99e-3)
    assert learning_rate(2500) == pytest.approx(1e-3 * 0.99 ** 2)
    assert learning_rate(60000) == pytest.approx(1e-3 * 0.99 ** 60)


def test_adam_ignores_zero_gradients():
    params = {"w": np.array([1.0, -2.0])}
    updated = adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=1e-3)
    assert np.array_equal(updated["w"], params["w"])


def test_adam_moves_by_lr_under_a_constant_gradient():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    g = np.array([0.5, -4.0])
    for _ in range(3):
        params = adam_step(params, {"w": g}, state, lr=1e-3)
    expected = np.array([1.0, -2.0]) - 3 * 1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(params["w"], expected, rtol=0, atol=1e-12)
    assert state.steps["w"] == 3


def test_adam_rejects_non_finite_gradients():
    with pytest.raises(NumericalError) as info:
        adam_step({"w": np.ones(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), lr=1e-3,
                  decomposition={"ru": 1.0})
    assert info.value.decomposition == {"ru": 1.0}


def test_optimizer_reset_clears_moments():
    optimizer = AdamOptimizer(_small("M2"))
    params = {"a": np.ones(2), "b": np.ones(2)}
    optimizer.step(params, {"a": np.ones(2), "b": np.ones(2)}, 0)
    optimizer.reset(["a"])
    assert "a" not in optimizer.state.m and "b" in optimizer.state.m


def test_zero_iterations_logs_the_initial_loss(tiny_dataset):
    report = Trainer(_small("M1", iterations=0), _training_set(tiny_dataset)).run()
    assert report.status == "completed"
    assert len(report.history) == 1 and report.history[0]["iter"] == 0
    assert report.initial_loss == report.final_loss


def test_training_is_deterministic(tiny_dataset):
    training_set = _training_set(tiny_dataset)
    first = Trainer(_small("M2", iterations=4), training_set).run()
    second = Trainer(_small("M2", iterations=4), training_set).run()
    assert [row["total"] for row in first.history] == [row["total"] for row in second.history]
    assert first.history[-1]["iter"] == 4


def test_grid_updates_run_in_the_first_half(tiny_dataset):
    report = Trainer(_small("M2", iterations=6, grid_update_every=2), _training_set(tiny_dataset)).run()
    assert [update["iter"] for update in report.grid_updates] == [0, 2]
    tanh_report = Trainer(_small("M1", iterations=6, grid_update_every=2), _training_set(tiny_dataset)).run()
    assert tanh_report.grid_updates == []


def test_non_finite_loss_fails_with_a_decomposition(tiny_dataset):
    training_set = _training_set(tiny_dataset)
    training_set.interface_uv[:] = np.nan
    with pytest.raises(NumericalError) as info:
        Trainer(_small("M1"), training_set).run()
    assert info.value.report.status == "failed"
    assert np.isnan(info.value.decomposition["xi_vel"])


def test_checkpoint_round_trip(tiny_dataset, tmp_path):
    coords = np.random.default_rng(3).uniform(0, 1, size=(9, 3))
    for model_id in ("M2", "M3"):
        model = FsiModel.initialize(_small(model_id, seed=4))
        loaded = FsiModel.load(model.save(tmp_path / f"{model_id}.npz"))
        assert loaded.config == model.config
        for domain in ("fluid", "interface"):
            assert np.array_equal(loaded.predict(domain, coords), model.predict(domain, coords))
