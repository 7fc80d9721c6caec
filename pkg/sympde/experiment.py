"""Runs one validated ExperimentConfig and writes its result files."""

import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from loguru import logger
from rich.console import Console

from .checkpoints import CheckpointStore, create_checkpoint_store
from .config_loader import canonical_form, config_hash
from .errors import ConfigError
from .particles import TimeGrid, dump_paths, simulate_batch
from .problems import ProblemSpec, make_problem
from .reporting import (
    MANIFEST_FILE,
    ROWS_FILE,
    ReportRow,
    aggregate_frame,
    lions_plot_data,
    print_aggregate,
    read_manifest,
    read_rows,
    write_aggregate,
    write_manifest,
    write_rows,
)
from .rng import Stream, stream
from .schemas import Command, ExperimentConfig
from .solver import (
    PolicyReport,
    RunReport,
    StepSolution,
    policy_forward_induction,
    solve_fullynonlinear,
    solve_semilinear,
    solve_with_exploration,
)
from .tools.approx_bench import ApproxBenchmark

R = TypeVar("R")


class ExperimentFailed(Exception):
    """Wraps the error of a failed run together with the rows finished before it."""

    def __init__(self, error: BaseException, rows: List[ReportRow]):
        super().__init__(str(error))
        self.error = error
        self.rows = rows


class ExperimentRunner:
    """Dispatches the configured command; every file write happens on the calling thread."""

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: Optional[Union[str, Path]] = None,
        console: Optional[Console] = None,
    ):
        self.config = config
        self.out_dir = Path(out_dir or config.out.dir)
        self.console = console or Console()
        self.manifest: Dict[str, Any] = {
            "command": config.command.value,
            "config_sha256": config_hash(config),
        }

    # helpers

    def _problem(self) -> ProblemSpec:
        p = self.config.problem
        return make_problem(p.name, p.n_particles, p.params)

    def _store(self, run: int) -> Optional[CheckpointStore]:
        if not self.config.out.checkpoints:
            return None
        return create_checkpoint_store("directory", self.out_dir / "checkpoints" / f"run_{run:03d}")

    def _map_runs(self, fn: Callable[[int], R]) -> List[Tuple[int, R]]:
        """Runs ``fn`` for every run index on ``workers`` threads; results in run order."""
        train = self.config.train
        done: List[Tuple[int, R]] = []
        with ThreadPoolExecutor(max_workers=train.workers) as pool:
            futures = {run: pool.submit(fn, run) for run in range(train.runs)}
            failure: Optional[BaseException] = None
            for run in sorted(futures):
                try:
                    done.append((run, futures[run].result()))
                except Exception as e:
                    logger.error(f"run {run} failed: {e}")
                    failure = failure or e
        if failure is not None:
            raise ExperimentFailed(
                failure, [ReportRow.from_report(r) for _, r in done if isinstance(r, RunReport)]
            )
        return done

    def _finish(self, rows: List[ReportRow], extra: Dict[str, Any]) -> Dict[str, Any]:
        write_rows(rows, self.out_dir)
        frame = aggregate_frame(rows)
        write_aggregate(rows, self.out_dir)
        self.manifest.update(extra)
        write_manifest(self.out_dir, "OK", self.manifest)
        print_aggregate(frame, self.console)
        return {
            "status": "success",
            "rows": len(rows),
            "out_dir": str(self.out_dir),
            "aggregate": frame,
        }

    # commands

    def run(self) -> Dict[str, Any]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        command = self.config.command
        if command is not Command.REPORT:
            (self.out_dir / "config.txt").write_text(canonical_form(self.config), encoding="utf-8")
        logger.info(f"🚀 {command.value} -> {self.out_dir}")
        if command is Command.APPROX:
            return self.run_approx()
        if command is Command.REPORT:
            return self.run_report()
        if command is Command.POLICY:
            return self.run_policy()
        return self.run_solves()

    def run_solves(self) -> Dict[str, Any]:
        config = self.config
        problem = self._problem()
        solutions: Dict[int, StepSolution] = {}

        def one(run: int) -> RunReport:
            store = self._store(run)
            if config.command is Command.SOLVE_FNL:
                solution, report = solve_fullynonlinear(
                    problem, config.net, config.train, run, store
                )
            elif config.command is Command.EXPLORE:
                solution, report = solve_with_exploration(
                    problem, config.net, config.train, config.mixture, run, store
                )
            else:
                solution, report = solve_semilinear(problem, config.net, config.train, run, store)
            if run == 0:
                solutions[0] = solution
            return report

        rows = self._rows([report for _, report in self._map_runs(one)])
        extra: Dict[str, Any] = {
            "problem": problem.name,
            "N": problem.n_particles,
            "runs": len(rows),
        }
        if config.out.lions_times and 0 in solutions:
            tables = lions_plot_data(
                solutions[0],
                problem,
                config.out.lions_times,
                self.out_dir,
                stream(config.train.seed, 0, Stream.EVALUATION, 1),
            )
            for table in tables:
                extra[f"lions.t{table.time:g}.slope"] = table.slope
        if config.out.dump_paths:
            self._dump_paths(problem)
        return self._finish(rows, extra)

    def _rows(self, reports: List[RunReport]) -> List[ReportRow]:
        for report in reports:
            prefix = f"run.{report.run}"
            self.manifest[f"{prefix}.u0"] = report.u0
            self.manifest[f"{prefix}.z0_lions"] = report.z0_lions
            self.manifest[f"{prefix}.finite_n_reference"] = report.finite_n_reference
            self.manifest[f"{prefix}.steps"] = len(report.steps)
        return [ReportRow.from_report(r) for r in reports]

    def _dump_paths(self, problem: ProblemSpec) -> None:
        train = self.config.train
        grid = TimeGrid.uniform(train.horizon or problem.horizon, train.n_steps, train.start)
        sampler = problem.initial_sampler
        if train.start > 0.0 and problem.optimal_law is not None:
            sampler = problem.optimal_law(train.start)
        paths = simulate_batch(
            problem.coefficients,
            grid,
            sampler,
            train.validation_size,
            stream(train.seed, 0, Stream.VALIDATION),
        )
        dump_paths(paths, self.out_dir / "paths.dat")

    def run_policy(self) -> Dict[str, Any]:
        config = self.config
        problem = self._problem()
        policies: Dict[int, PolicyReport] = {}

        def one(run: int) -> RunReport:
            policy = policy_forward_induction(problem, config.net, config.train, run)
            if run == 0:
                policies[0] = policy
            return policy.reports[0]

        rows = self._rows([report for _, report in self._map_runs(one)])
        extra: Dict[str, Any] = {
            "problem": problem.name,
            "N": problem.n_particles,
            "runs": len(rows),
        }
        if 0 in policies:
            path = self.write_policy(policies[0])
            extra["policy_file"] = path.name
        return self._finish(rows, extra)

    def write_policy(self, policy: PolicyReport) -> Path:
        n = len(policy.mean_path)
        frame = pd.DataFrame(
            {
                "t": policy.times[:n],
                "mean": policy.mean_path,
                "mean_stderr": policy.mean_stderr,
                "variance": policy.variance_path,
            }
        )
        if policy.control_rmse is not None:
            frame["control_rmse"] = np.append(policy.control_rmse, np.nan)[:n]
        path = self.out_dir / "policy.csv"
        frame.to_csv(path, index=False, float_format="%.10g")
        logger.info(f"💾 policy trajectory moments -> {path}")
        return path

    def run_approx(self) -> Dict[str, Any]:
        started = time.perf_counter()
        bench = ApproxBenchmark(
            self.config.approx, seed=self.config.train.seed, console=self.console
        )
        result = bench.run()
        history = pd.DataFrame(result["history"], columns=["epoch", "validation_mse"])
        history.to_csv(self.out_dir / "approx.csv", index=False, float_format="%.10g")
        self.manifest.update({k: v for k, v in result.items() if k not in ("history", "status")})
        self.manifest["wall_s"] = time.perf_counter() - started
        write_manifest(self.out_dir, "OK", self.manifest)
        return result

    def run_report(self) -> Dict[str, Any]:
        if not (self.out_dir / ROWS_FILE).exists():
            raise ConfigError(f"no {ROWS_FILE} in {self.out_dir} to report on")
        rows = read_rows(self.out_dir / ROWS_FILE)
        frame = aggregate_frame(rows)
        write_aggregate(rows, self.out_dir)
        print_aggregate(frame, self.console)
        previous = read_manifest(self.out_dir) if (self.out_dir / MANIFEST_FILE).exists() else {}
        self.manifest = {**previous, "reaggregated_rows": len(rows)}
        write_manifest(self.out_dir, "OK", self.manifest)
        return {
            "status": "success",
            "rows": len(rows),
            "out_dir": str(self.out_dir),
            "aggregate": frame,
        }


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    console: Optional[Console] = None,
) -> Dict[str, Any]:
    """Run ``config``. On failure, rows of finished runs are flushed, the manifest is
    marked FAILED and the underlying error is re-raised."""
    runner = ExperimentRunner(config, out_dir, console)
    try:
        return runner.run()
    except ExperimentFailed as failed:
        if failed.rows:
            write_rows(failed.rows, runner.out_dir)
            write_aggregate(failed.rows, runner.out_dir)
        error: BaseException = failed.error
    except Exception as e:
        error = e
    write_manifest(runner.out_dir, "FAILED", {**runner.manifest, "error": str(error)})
    raise error
