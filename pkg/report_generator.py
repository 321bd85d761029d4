"""
Report Generator for fsilab
Generates a markdown comparison report from metrics, training runs and verdicts.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from fsi_types import DOMAINS, FIELDS
from ibm_solver import REFERENCE_FLUID_STD

FIELD_LABELS = {"u": "u", "v": "v", "p": "p"}
DOMAIN_LABELS = {"fluid": "Fluid", "interface": "Solid interface"}


class ReportGenerator:
    """Generates markdown reports from an evaluated set of runs.

    ``data`` holds:
      metrics      {run: {domain: {field: percent}}}
      runs         list of TrainReport dicts
      verdicts     {name: pass|fail|n/a}
      statistics   {"fluid": {field: std}, ...} of the reference dataset
      dataset      dataset metadata
    """

    def __init__(self, data: Dict[str, Any]):
        self.data = data

    def _runs(self) -> List[Dict[str, Any]]:
        return sorted(self.data.get("runs", []), key=lambda r: r.get("run", ""))

    @staticmethod
    def _median_metrics(metrics: Dict[str, Dict[str, Dict[str, float]]], model: str) -> Optional[Dict]:
        runs = [m for run, m in metrics.items() if run == model or run.startswith(f"{model}_seed")]
        if not runs:
            return None
        return {domain: {name: float(np.median([r[domain][name] for r in runs])) for name in FIELDS}
                for domain in DOMAINS}

    def models(self) -> List[str]:
        models = set()
        for run in self.data.get("metrics", {}):
            models.add(run.split("_seed")[0])
        return sorted(models)

    def comparison_rows(self) -> List[Dict[str, Any]]:
        """One row per (model, domain, field) with the median over seeds."""
        metrics = self.data.get("metrics", {})
        rows = []
        for model in self.models():
            median = self._median_metrics(metrics, model)
            for domain in DOMAINS:
                for name in FIELDS:
                    rows.append({"model": model, "domain": domain, "field": name,
                                 "rel_l2_percent": median[domain][name]})
        return rows

    def generate_run_summary(self) -> str:
        dataset = self.data.get("dataset", {})
        runs = self._runs()
        completed = sum(1 for r in runs if r.get("status") == "completed")
        runtime = sum(r.get("wall_clock_seconds", 0.0) for r in runs)
        minutes = int(runtime // 60)
        seconds = int(runtime % 60)

        report = f"""# fsilab - Comparison Report

## Run Summary
- Dataset: grid {dataset.get('grid', '?')}, Re {dataset.get('reynolds', '?')}, dt {dataset.get('dt', '?')}, T {dataset.get('t_end', '?')}
- Solid model: {dataset.get('solid_model', 'unknown')} ({dataset.get('markers', 0)} markers, {dataset.get('substeps', '?')} substeps per step)
- Training runs: {completed}/{len(runs)} completed
- Total training time: {minutes} min {seconds} sec
- Models evaluated: {', '.join(self.models()) or 'none'}
"""
        return report

    def generate_metric_table(self) -> str:
        """Relative L2 (%) grid: rows domain x field, columns models."""
        metrics = self.data.get("metrics", {})
        models = self.models()
        report = "\n## Relative L2 Error (%)\n"
        if not models:
            return report + "- No metrics available\n"
        report += "\n| Domain | Field | " + " | ".join(models) + " |\n"
        report += "|---|---|" + "---|" * len(models) + "\n"
        medians = {model: self._median_metrics(metrics, model) for model in models}
        for domain in DOMAINS:
            for name in FIELDS:
                cells = " | ".join(f"{medians[m][domain][name]:.2f}" for m in models)
                report += f"| {DOMAIN_LABELS[domain]} | {FIELD_LABELS[name]} | {cells} |\n"
        if any(len([r for r in metrics if r.startswith(f"{m}_seed")]) > 1 for m in models):
            report += "\nValues are medians over seeds.\n"
        return report

    def generate_loss_summary(self) -> str:
        runs = self._runs()
        report = "\n## Final Training Loss\n"
        if not runs:
            return report + "- No training runs found\n"
        report += "\n| Run | Iterations | Initial | Final | Reduction |\n|---|---|---|---|---|\n"
        for run in runs:
            initial, final = run.get("initial_loss"), run.get("final_loss")
            reduction = f"{initial / final:.1f}x" if initial and final else "n/a"
            initial_text = f"{initial:.4e}" if initial is not None else "n/a"
            final_text = f"{final:.4e}" if final is not None else "n/a"
            report += f"| {run['run']} | {run.get('iterations', 0)} | {initial_text} | {final_text} | {reduction} |\n"
        return report

    def generate_verdicts(self) -> str:
        verdicts = self.data.get("verdicts", {})
        report = "\n## Ordering Verdicts\n"
        if not verdicts:
            return report + "- No verdicts computed\n"
        for name, value in verdicts.items():
            marker = "✅" if value == "pass" else ("❌" if value == "fail" else "➖")
            report += f"- {marker} `{name}: {value}`\n"
        return report

    def generate_parameter_counts(self) -> str:
        seen = {}
        for run in self._runs():
            seen.setdefault(run.get("model_id"), run)
        report = "\n## Parameter Counts\n"
        if not seen:
            return report + "- No training runs found\n"
        report += "\n| Model | Architecture | Activation | Parameters | Reference count | Formula |\n|---|---|---|---|---|---|\n"
        for model_id, run in sorted(seen.items()):
            published = run.get("published_param_count")
            report += (f"| {model_id} | {run.get('architecture')} | {run.get('activation')} | "
                       f"{run.get('param_count', 0)} | {published if published is not None else 'n/a'} | "
                       f"{run.get('param_formula', '')} |\n")
        return report

    def generate_statistics_comparison(self) -> str:
        statistics = self.data.get("statistics", {}).get("fluid", {})
        report = "\n## Field Statistics (fluid)\n"
        if not statistics:
            return report + "- No statistics available\n"
        report += "\n| Field | Std | Reference | Ratio |\n|---|---|---|---|\n"
        for name, reference in REFERENCE_FLUID_STD.items():
            value = statistics.get(name)
            if value is None:
                continue
            report += f"| {name} | {value:.4f} | {reference:.3f} | {value / reference:.2f} |\n"
        warnings = self.data.get("warnings", [])
        if warnings:
            report += "\n**Warnings:**\n" + "".join(f"- {w}\n" for w in warnings)
        return report

    def generate_full_report(self) -> str:
        return (self.generate_run_summary() + self.generate_metric_table() + self.generate_loss_summary()
                + self.generate_verdicts() + self.generate_parameter_counts()
                + self.generate_statistics_comparison())

    def generate_all_reports(self, output_dir: Path) -> List[Path]:
        """Write report.md and comparison.csv."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        report_path = output_dir / "report.md"
        report_path.write_text(self.generate_full_report())

        lines = ["model,domain,field,rel_l2_percent"]
        for row in self.comparison_rows():
            lines.append(f"{row['model']},{row['domain']},{row['field']},{row['rel_l2_percent']:.10g}")
        comparison_path = output_dir / "comparison.csv"
        comparison_path.write_text("\n".join(lines) + "\n")
        return [report_path, comparison_path]
