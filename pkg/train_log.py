"""
Training session recorder.
Captures per-iteration loss terms during a run and persists them as a CSV loss
log plus a JSON run report.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional


@dataclass
class TrainReport:
    run: str
    model_id: str
    architecture: str
    activation: str
    seed: int
    iterations: int
    status: str = "running"
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    final_terms: Dict[str, float] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)
    grid_updates: List[Dict[str, int]] = field(default_factory=list)
    param_count: int = 0
    param_formula: str = ""
    published_param_count: Optional[int] = None
    wall_clock_seconds: float = 0.0
    metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    checkpoint: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainReport":
        return cls(**data)


class TrainingSession:
    """Collects the loss history of one model/seed run."""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.report: Optional[TrainReport] = None
        self.term_names: List[str] = []
        self.start_time: Optional[float] = None

    def start_session(self, model_id: str, architecture: str, activation: str, seed: int,
                      iterations: int, term_names: List[str]) -> str:
        """Initialize a new run record; returns the run name."""
        self.start_time = time.time()
        self.term_names = list(term_names)
        self.report = TrainReport(
            run=f"{model_id}_seed{seed}",
            model_id=model_id,
            architecture=architecture,
            activation=activation,
            seed=seed,
            iterations=iterations,
        )
        return self.report.run

    def record_iteration(self, iteration: int, lr: float, total: float, contributions: Dict[str, float]):
        """Record one logged row: total loss and the weighted contribution of each term."""
        row = {"iter": iteration, "lr": lr, "total": total}
        for name in self.term_names:
            row[name] = contributions.get(name, 0.0)
        self.report.history.append(row)
        if self.report.initial_loss is None:
            self.report.initial_loss = total
        self.report.final_loss = total
        self.report.final_terms = {name: row[name] for name in self.term_names}

    def record_grid_update(self, iteration: int, units_moved: int):
        self.report.grid_updates.append({"iter": iteration, "units_moved": units_moved})

    def record_model(self, param_count: int, formula: str, published_count: Optional[int]):
        self.report.param_count = param_count
        self.report.param_formula = formula
        self.report.published_param_count = published_count

    def end_session(self, status: str = "completed", error: Optional[str] = None) -> TrainReport:
        """Finalize the run record."""
        if self.start_time:
            self.report.wall_clock_seconds = time.time() - self.start_time
        self.report.status = status
        self.report.error = error
        return self.report

    def loss_log_csv(self) -> str:
        header = ["iter", "lr", "total"] + self.term_names
        lines = [",".join(header)]
        for row in self.report.history:
            lines.append(",".join([str(int(row["iter"]))] + [repr(float(row[key])) for key in header[1:]]))
        return "\n".join(lines) + "\n"

    def write_loss_log(self) -> Path:
        if self.output_dir is None:
            raise ValueError("No output directory for the loss log")
        path = self.output_dir / "logs" / f"{self.report.run}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.loss_log_csv())
        return path

    def save(self) -> Path:
        """Save the run report to JSON."""
        if self.report is None:
            raise ValueError("No active session to save")
        if self.output_dir is None:
            raise ValueError("No output directory for the run report")
        path = self.output_dir / "reports" / f"{self.report.run}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.report.to_dict(), f, indent=2)
        return path

    @staticmethod
    def load_session(filepath: Path) -> TrainReport:
        """Load a run report from its JSON file."""
        with open(filepath, 'r') as f:
            return TrainReport.from_dict(json.load(f))

    def get_summary_stats(self) -> Dict[str, Any]:
        """Quick summary of the run."""
        report = self.report
        initial, final = report.initial_loss, report.final_loss
        return {
            "run": report.run,
            "status": report.status,
            "iterations": report.iterations,
            "runtime_seconds": report.wall_clock_seconds,
            "initial_loss": initial,
            "final_loss": final,
            "reduction": initial / final if initial and final else None,
            "grid_updates": len(report.grid_updates),
            "logged_rows": len(report.history),
        }
