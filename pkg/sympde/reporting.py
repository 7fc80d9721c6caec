"""Result rows, aggregation, CSV and manifest files, and Lions-derivative plot data."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from .checkpoints import read_key_values, write_key_values
from .errors import StructuralError, UnsupportedError
from .particles import InitialSampler
from .problems import ProblemSpec
from .solver import RunReport, StepSolution

ROW_COLUMNS = [
    "problem",
    "N",
    "N_T",
    "run",
    "U0",
    "Z0_mean",
    "Z0_norm",
    "reference",
    "rel_error",
    "wall_s",
]
AGGREGATE_COLUMNS = [
    "problem",
    "N",
    "N_T",
    "runs",
    "U0_mean",
    "U0_std",
    "Z0_mean",
    "Z0_norm",
    "reference",
    "rel_error",
    "wall_s",
]

ROWS_FILE = "rows.csv"
AGGREGATE_FILE = "aggregate.csv"
MANIFEST_FILE = "manifest.txt"


class ReportRow(BaseModel):
    """One run of one configuration, as written to rows.csv."""

    problem: str
    N: int = Field(..., ge=1)
    N_T: int = Field(..., ge=1)
    run: int = Field(..., ge=0)
    U0: float
    Z0_mean: float
    Z0_norm: float
    reference: Optional[float] = None
    wall_s: float = Field(0.0, ge=0.0)

    @property
    def rel_error(self) -> Optional[float]:
        return relative_error(self.U0, self.reference)

    @classmethod
    def from_report(cls, report: RunReport) -> "ReportRow":
        return cls(
            problem=report.problem,
            N=report.n_particles,
            N_T=report.n_steps,
            run=report.run,
            U0=report.u0,
            Z0_mean=report.z0_mean,
            Z0_norm=report.z0_norm,
            reference=report.reference,
            wall_s=report.wall_s,
        )

    def as_record(self) -> Dict[str, Any]:
        record = self.model_dump()
        record["rel_error"] = self.rel_error
        return {column: record[column] for column in ROW_COLUMNS}


def relative_error(value: float, reference: Optional[float]) -> Optional[float]:
    if reference is None or reference == 0.0 or np.isnan(reference):
        return None
    return abs(value - reference) / abs(reference)


def aggregate(rows: Sequence[ReportRow]) -> Dict[str, Any]:
    """Mean and sample standard deviation over runs, relative error of the mean."""
    if not rows:
        raise StructuralError("aggregate needs at least one row")
    first = rows[0]
    if any((r.problem, r.N, r.N_T) != (first.problem, first.N, first.N_T) for r in rows):
        raise StructuralError("aggregate mixes rows of different configurations")
    u0 = np.array([r.U0 for r in rows])
    mean = float(u0.mean())
    std = float(u0.std(ddof=1)) if len(rows) > 1 else 0.0
    references = [r.reference for r in rows if r.reference is not None]
    reference = float(np.mean(references)) if references else None
    return {
        "problem": first.problem,
        "N": first.N,
        "N_T": first.N_T,
        "runs": len(rows),
        "U0_mean": mean,
        "U0_std": std,
        "Z0_mean": float(np.mean([r.Z0_mean for r in rows])),
        "Z0_norm": float(np.mean([r.Z0_norm for r in rows])),
        "reference": reference,
        "rel_error": relative_error(mean, reference),
        "wall_s": float(np.mean([r.wall_s for r in rows])),
    }


def aggregate_frame(rows: Sequence[ReportRow]) -> pd.DataFrame:
    """One aggregate row per (problem, N, N_T) group."""
    groups: Dict[tuple, List[ReportRow]] = {}
    for row in rows:
        groups.setdefault((row.problem, row.N, row.N_T), []).append(row)
    return pd.DataFrame([aggregate(g) for g in groups.values()], columns=AGGREGATE_COLUMNS)


def write_rows(rows: Sequence[ReportRow], out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / ROWS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r.problem, r.N, r.N_T, r.run))
    frame = pd.DataFrame([r.as_record() for r in ordered], columns=ROW_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


def read_rows(path: Union[str, Path]) -> List[ReportRow]:
    frame = pd.read_csv(path)
    missing = [c for c in ROW_COLUMNS if c not in frame.columns]
    if missing:
        raise StructuralError(f"{path} lacks columns {missing}")
    frame = frame.astype(object).where(frame.notna(), None)
    return [
        ReportRow(
            problem=str(rec["problem"]),
            N=int(rec["N"]),
            N_T=int(rec["N_T"]),
            run=int(rec["run"]),
            U0=float(rec["U0"]),
            Z0_mean=float(rec["Z0_mean"]),
            Z0_norm=float(rec["Z0_norm"]),
            reference=None if rec["reference"] is None else float(rec["reference"]),
            wall_s=float(rec["wall_s"]),
        )
        for rec in frame.to_dict("records")
    ]


def write_aggregate(rows: Sequence[ReportRow], out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / AGGREGATE_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    aggregate_frame(rows).to_csv(path, index=False, float_format="%.10g")
    return path


def write_manifest(out_dir: Union[str, Path], status: str, entries: Mapping[str, Any]) -> Path:
    """manifest.txt with ``status`` first, then ``entries`` in order."""
    rest = {k: v for k, v in entries.items() if k != "status"}
    return write_key_values(Path(out_dir) / MANIFEST_FILE, {"status": status, **rest})


def read_manifest(out_dir: Union[str, Path]) -> Dict[str, str]:
    return read_key_values(Path(out_dir) / MANIFEST_FILE)


def print_aggregate(frame: pd.DataFrame, console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="📊 Aggregated runs")
    for column in AGGREGATE_COLUMNS:
        table.add_column(column, justify="left" if column == "problem" else "right")
    for rec in frame.to_dict("records"):
        cells = []
        for column in AGGREGATE_COLUMNS:
            value = rec[column]
            if value is None or (isinstance(value, float) and np.isnan(value)):
                cells.append("")
            elif isinstance(value, float):
                cells.append(f"{value:.6g}")
            else:
                cells.append(str(value))
        table.add_row(*cells)
    console.print(table)


# ---------------------------------------------------------- Lions plots


@dataclass(frozen=True)
class LionsTable:
    time: float
    path: Path
    slope: float


def lions_file_name(t: float) -> str:
    return f"lions_t{t:g}.dat"


def lions_plot_data(
    solution: StepSolution,
    problem: ProblemSpec,
    times: Sequence[float],
    out_dir: Union[str, Path],
    rng: np.random.Generator,
    law: Optional[Callable[[float], InitialSampler]] = None,
    n_configurations: int = 1,
) -> List[LionsTable]:
    """Columns x, analytic Lions derivative and N Z(X, x) at each requested time, sorted by x.

    States at time t come from ``law(t)``, the problem's optimal law by default.
    """
    if problem.lions_reference is None:
        raise UnsupportedError(f"{problem.name} has no analytic Lions derivative")
    if problem.dim != 1:
        raise UnsupportedError("Lions plot data is written for one-dimensional particles only")
    law = law or problem.optimal_law
    if law is None:
        raise UnsupportedError(f"{problem.name} has no law to sample states at a given time")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for t in times:
        k = solution.grid.nearest_step(t)
        t_k = solution.time(k)
        X = law(t_k)(n_configurations, rng)
        analytic = problem.lions_reference(t_k, X, X).ravel()
        learned = (problem.n_particles * solution.derivative(k, X)).ravel()
        x = X.ravel()
        order = np.argsort(x, kind="stable")
        data = np.column_stack([x[order], analytic[order], learned[order]])
        path = out / lions_file_name(t)
        np.savetxt(path, data, fmt="%.10e", header="x analytic learned")
        slope = float(np.polyfit(analytic, learned, 1)[0]) if np.ptp(analytic) > 0 else float("nan")
        logger.info(f"📈 Lions data at t={t_k:.3f}: slope {slope:.4f} -> {path}")
        tables.append(LionsTable(time=t_k, path=path, slope=slope))
    return tables
