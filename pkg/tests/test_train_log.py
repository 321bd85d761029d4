from train_log import TrainingSession


def _session(tmp_path):
    session = TrainingSession(output_dir=tmp_path)
    session.start_session("M4", "EulerianLagrangian", "bspline", 2, 20, ["ru", "coupling"])
    return session


def test_start_session_names_the_run(tmp_path):
    session = _session(tmp_path)
    assert session.report.run == "M4_seed2"
    assert session.report.status == "running"


def test_record_iteration_tracks_initial_and_final_loss(tmp_path):
    session = _session(tmp_path)
    session.record_iteration(0, 1e-3, 4.0, {"ru": 3.0, "coupling": 1.0})
    session.record_iteration(10, 1e-3, 0.5, {"ru": 0.25})
    report = session.report
    assert report.initial_loss == 4.0 and report.final_loss == 0.5
    # terms missing from a row are logged as zero
    assert report.final_terms == {"ru": 0.25, "coupling": 0.0}


def test_loss_log_is_deterministic_csv(tmp_path):
    session = _session(tmp_path)
    session.record_iteration(0, 1e-3, 0.1 + 0.2, {"ru": 0.1, "coupling": 0.2})
    path = session.write_loss_log()
    assert path == tmp_path / "logs" / "M4_seed2.csv"
    lines = path.read_text().splitlines()
    assert lines == ["iter,lr,total,ru,coupling", "0,0.001,0.30000000000000004,0.1,0.2"]


def test_save_and_load_session(tmp_path):
    session = _session(tmp_path)
    session.record_model(1234, "6 x [2 x 24]", 411000)
    session.record_grid_update(0, 48)
    session.record_iteration(0, 1e-3, 2.0, {"ru": 2.0})
    session.end_session("completed")
    path = session.save()
    assert path == tmp_path / "reports" / "M4_seed2.json"

    loaded = TrainingSession.load_session(path)
    assert loaded.status == "completed"
    assert loaded.param_count == 1234 and loaded.published_param_count == 411000
    assert loaded.grid_updates == [{"iter": 0, "units_moved": 48}]
    assert loaded.history == session.report.history


def test_failed_session_keeps_the_error(tmp_path):
    session = _session(tmp_path)
    report = session.end_session("failed", "non-finite loss at iteration 3")
    assert report.status == "failed"
    assert report.error == "non-finite loss at iteration 3"


def test_summary_stats(tmp_path):
    session = _session(tmp_path)
    session.record_iteration(0, 1e-3, 8.0, {})
    session.record_iteration(20, 1e-3, 2.0, {})
    session.end_session()
    stats = session.get_summary_stats()
    assert stats["reduction"] == 4.0
    assert stats["logged_rows"] == 2
    assert stats["grid_updates"] == 0
