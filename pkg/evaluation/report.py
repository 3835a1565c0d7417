"""Metric report files and the console table."""
import csv
import logging
from pathlib import Path
from typing import Dict, Union

from evaluation.metrics import MetricReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPORT_COLUMNS = (
    ('b_minfde_k', "b-minFDE"),
    ('minfde_k', "minFDE"),
    ('minade_k', "minADE"),
    ('mr_k', "MR"),
    ('minfde_1', "minFDE(1)"),
    ('minade_1', "minADE(1)"),
    ('mr_1', "MR(1)"),
)


def write_metrics_csv(path: PathLike, report: MetricReport, subset: str = "all") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    row = {'subset': subset}
    row.update(report.to_dict())
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(row))
        writer.writeheader()
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    logger.info("metrics_written | path=%s | subset=%s", path, subset)
    return path


def write_horizon_csv(path: PathLike, curve: Dict[int, float], num_modes: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['horizon', f'minfde{num_modes}'])
        for horizon in sorted(curve):
            writer.writerow([horizon, f"{curve[horizon]:.6f}"])
    return path


def format_report(report: MetricReport, title: str = "Evaluation", verbose: bool = False) -> str:
    """Fixed-width table for standard output."""
    columns = list(REPORT_COLUMNS)
    if verbose and report.minade_k_best_ade is not None:
        columns.append(('minade_k_best_ade', "minADE(best-ADE)"))
    widths = [max(len(label), 9) for _, label in columns]
    header = "  ".join(label.rjust(w) for (_, label), w in zip(columns, widths))
    values = "  ".join(f"{getattr(report, key):.4f}".rjust(w) for (key, _), w in zip(columns, widths))
    lines = [
        f"{title}: {report.n_cases} agents in {report.n_scenes} scenes",
        header,
        values,
    ]
    return "\n".join(lines)
