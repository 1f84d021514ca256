"""Experiment runner: builds tasks and solvers from an ExperimentConfig, runs them and persists traces and summaries."""

import json
import logging
from dataclasses import asdict, dataclass, replace
from math import nan
from pathlib import Path
from typing import Optional

import minibar
import numpy as np
import pandas as pd

from baselines import InertialConfig, InertialSolver, InvSolver, PalmSolver
from confighandler import SOLVER_PRESETS, ExperimentConfig, SolverSpec
from embedded_solvers import AdmmDictionaryOperator, IlluminationOperator, PithOperator, ProxGradientOperator
from errors import ConfigError, InvalidArgumentError
from interface import SolverCallbacks
from pnm import read_image_pnm, write_image_pnm
from problem import Block, BlockProblem, ValidationReport, validate_problem
from tasks import (
    DlInstance,
    LieInstance,
    build_dl_problem,
    build_lie_problem,
    dl_initial_point,
    enhance_rgb,
    lie_initial_point,
    synth_dl_data,
    synth_lie_image,
    to_luminance,
)
from tecu import SolveResult, Solver, SolverConfig
from update_rules import Embedded, Proximal, ProxLinear

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "iter",
    "objective",
    "phi",
    "rel_change_x",
    "rel_change_y",
    "rel_change_obj",
    "err_x",
    "err_y",
    "inner_x",
    "inner_y",
    "wall_s",
]
SUMMARY_FILE = "summary.json"
# default proximal weights of the Retinex blocks
REFLECTANCE_ZETA = 1e-3
ILLUMINATION_ZETA = 1.0


@dataclass
class RunSummary:
    solver: str
    combination: str
    seed: int
    outer_iterations: int
    total_inner_propagations: int
    converged: bool
    final_objective: float
    wall_time_s: float
    descent_violations: int

    @classmethod
    def from_result(cls, solver: str, seed: int, result: SolveResult) -> "RunSummary":
        return cls(
            solver=solver,
            combination=result.combination_label,
            seed=seed,
            outer_iterations=result.outer_iterations,
            total_inner_propagations=result.total_inner_steps,
            converged=result.converged,
            final_objective=result.final_objective,
            wall_time_s=result.wall_time_s,
            descent_violations=len(result.descent_violations),
        )


@dataclass
class TaskContext:
    """A built problem with its initial point; `data` is Y for dictionary learning and O for Retinex."""

    problem: BlockProblem
    init_x: np.ndarray
    init_y: np.ndarray
    data: np.ndarray
    lam: float = nan
    alpha: float = nan
    radius: int = 2
    truth: tuple = ()


def build_task(config: ExperimentConfig, seed: int) -> TaskContext:
    """Generate or load the task data for one seed; identical for every solver of that seed."""
    if config.task == "l0dl":
        spec = replace(config.synth, seed=seed)
        Y, D_true, W_true = synth_dl_data(spec)
        inst = DlInstance(Y, config.lam, spec.m)
        W0, D0 = dl_initial_point(inst, seed=seed)
        return TaskContext(build_dl_problem(inst), W0, D0, Y, lam=config.lam, truth=(W_true, D_true))
    if config.image is not None:
        O = to_luminance(read_image_pnm(config.image))
        truth = ()
    else:
        O, I_true, R_true = synth_lie_image(config.size, seed)
        truth = (I_true, R_true)
    inst = LieInstance(O, config.alpha)
    I0, R0 = lie_initial_point(inst)
    return TaskContext(build_lie_problem(inst), I0, R0, O, alpha=config.alpha, radius=config.radius, truth=truth)


def _embedded(operator, params: dict) -> Embedded:
    return Embedded(
        operator,
        C=params.get("C", 0.4),
        eta=params.get("eta", 1.0),
        k_max=int(params.get("k_max", 20)),
        check_every=int(params.get("check_every", 1)),
        fallback_safety=params.get("safety", 1.5),
    )


def _illumination(task: TaskContext, params: dict) -> IlluminationOperator:
    return IlluminationOperator(
        task.data,
        task.alpha,
        radius=int(params.get("radius", task.radius)),
        smoothing_steps=int(params.get("smoothing_steps", 1)),
    )


def _preset_rules(task_name: str, preset: str, task: TaskContext, params: dict):
    prox_linear = ProxLinear(params.get("safety", 1.5))
    if task_name == "l0dl":
        rules = {
            "TECU": lambda: (prox_linear, _embedded(AdmmDictionaryOperator(task.data), params)),
            "TECU-PITH": lambda: (_embedded(PithOperator(task.problem, task.data, task.lam), params), prox_linear),
            "TECU-3-6": lambda: (
                _embedded(PithOperator(task.problem, task.data, task.lam), params),
                _embedded(AdmmDictionaryOperator(task.data), params),
            ),
        }
    else:
        proximal = Proximal(params.get("zeta", REFLECTANCE_ZETA))
        rules = {
            "TECU": lambda: (_embedded(_illumination(task, params), params), proximal),
            "TECU-3-5": lambda: (_embedded(_illumination(task, params), params), prox_linear),
            "PAM": lambda: (Proximal(ILLUMINATION_ZETA), proximal),
            "CD": lambda: (prox_linear, proximal),
        }
    return rules[preset]() if preset in rules else None


def build_rule(rule: dict, block: Block, task_name: str, task: TaskContext):
    """Turn an explicit `rule_x`/`rule_y` table into an update rule."""
    kind = rule["kind"]
    if kind == "proximal":
        return Proximal(rule.get("zeta", 1.0))
    if kind == "prox_linear":
        return ProxLinear(rule.get("safety", 1.5))
    operator = rule["operator"]
    if operator == "prox_gradient":
        instance = ProxGradientOperator(task.problem, block)
    elif operator == "admm" and task_name == "l0dl" and block is Block.Y:
        instance = AdmmDictionaryOperator(task.data)
    elif operator == "pith" and task_name == "l0dl" and block is Block.X:
        instance = PithOperator(task.problem, task.data, task.lam)
    elif operator == "illumination" and task_name == "lie" and block is Block.X:
        instance = _illumination(task, rule)
    else:
        raise ConfigError(
            f"operator '{operator}' does not apply to block {block.value} of task {task_name}",
            field=f"rule_{block.value}.operator",
        )
    return _embedded(instance, rule)


def build_solver(
    spec: SolverSpec, task_name: str, task: TaskContext, max_outer=500, tol=1e-4,
    callbacks: Optional[SolverCallbacks] = None, keep_history=False,
) -> Solver:
    """A fresh solver (with fresh operator contexts) for one run."""
    params = spec.params
    common = dict(max_outer=max_outer, stop_tol=tol, keep_history=keep_history)
    try:
        if spec.preset is None:
            config = SolverConfig(
                build_rule(spec.rule_x, Block.X, task_name, task),
                build_rule(spec.rule_y, Block.Y, task_name, task),
                **common,
            )
            return Solver(config, callbacks, name=spec.name)
        safety = params.get("safety", 1.5)
        if spec.preset == "PALM":
            return PalmSolver(safety=safety, callbacks=callbacks, **common)
        if spec.preset in ("iPALM", "BCU"):
            inertial = InertialConfig(params["beta"]) if "beta" in params else None
            return InertialSolver(spec.preset, inertial, safety=safety, callbacks=callbacks, **common)
        if spec.preset == "INV":
            return InvSolver(task.data, eta=params.get("eta", 1.0), safety=safety, callbacks=callbacks, **common)
        rules = _preset_rules(task_name, spec.preset, task, params)
        if rules is None:
            raise ConfigError(f"unknown preset '{spec.preset}' for task {task_name}", field="preset")
        return Solver(SolverConfig(*rules, **common), callbacks, name=spec.name)
    except InvalidArgumentError as error:
        raise ConfigError(f"solver '{spec.name}': {error}", field="solvers") from error


def trace_frame(trace: list) -> pd.DataFrame:
    rows = [
        {
            "iter": record.iteration,
            "objective": record.objective,
            "phi": record.phi,
            "rel_change_x": record.rel_change_x,
            "rel_change_y": record.rel_change_y,
            "rel_change_obj": record.rel_change_obj,
            "err_x": record.err_norm_x,
            "err_y": record.err_norm_y,
            "inner_x": record.inner_steps_x,
            "inner_y": record.inner_steps_y,
            "wall_s": record.wall_time_s,
        }
        for record in trace
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def emit_trace_csv(trace: list, path):
    """Write one row per outer iteration, decimals with 17 significant digits."""
    if len(trace) == 0:
        raise InvalidArgumentError("cannot write an empty trace")
    trace_frame(trace).to_csv(path, index=False, float_format="%.17g")


def read_trace_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def emit_summary_json(summaries: list, path):
    """Write the summaries as a JSON array with stable key order."""
    with Path(path).open("w") as fp:
        json.dump([asdict(summary) for summary in summaries], fp, indent=2)
        fp.write("\n")


def trace_path(output_dir, task_name: str, solver: str, seed: int) -> Path:
    return Path(output_dir) / f"{task_name}_{solver}_{seed}.csv"


def run_experiment(
    config: ExperimentConfig, callbacks: Optional[SolverCallbacks] = None, progress=False
) -> list[RunSummary]:
    """Solve every (seed, solver) pair, writing one trace per run and the summary file at the end."""
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    runs = [(seed, spec) for seed in config.seeds for spec in config.solvers]
    tasks = {}
    summaries = []
    for seed, spec in minibar.bar(runs) if progress else runs:
        if seed not in tasks:
            tasks[seed] = build_task(config, seed)
        task = tasks[seed]
        solver = build_solver(
            spec, config.task, task, config.max_outer, config.tol, callbacks, config.keep_history
        )
        result = solver.solve(task.problem, task.init_x, task.init_y)
        emit_trace_csv(result.trace, trace_path(output_dir, config.task, spec.name, seed))
        summaries.append(RunSummary.from_result(spec.name, seed, result))
        logger.info(
            f"{spec.name} seed {seed}: {result.outer_iterations} iterations, "
            f"{result.total_inner_steps} propagations, status {result.status.value}"
        )
    emit_summary_json(summaries, output_dir / SUMMARY_FILE)
    return summaries


def validate_experiment(config: ExperimentConfig, sample_count=10) -> ValidationReport:
    """Oracle checks on the task built for the first configured seed."""
    task = build_task(config, config.seeds[0])
    return validate_problem(task.problem, sample_count, seed=config.seeds[0])


def enhance_image(
    input_path, output_path, alpha=0.1, solver="TECU", gamma=0.45, radius=2, max_outer=300, tol=1e-4,
    callbacks: Optional[SolverCallbacks] = None,
) -> SolveResult:
    """Decompose the max channel of an image, brighten the illumination and write the recombined image."""
    image = read_image_pnm(input_path)
    inst = LieInstance(to_luminance(image), alpha)
    I0, R0 = lie_initial_point(inst)
    task = TaskContext(build_lie_problem(inst), I0, R0, inst.O, alpha=alpha, radius=radius)
    spec = SolverSpec(name=solver, preset=solver)
    if solver not in SOLVER_PRESETS["lie"]:
        raise ConfigError(f"unknown solver '{solver}' for enhancement", field="solver")
    result = build_solver(spec, "lie", task, max_outer, tol, callbacks).solve(task.problem, I0, R0)
    write_image_pnm(output_path, enhance_rgb(image, result.final_x, result.final_y, gamma))
    return result
