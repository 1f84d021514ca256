"""Outer loop of task-embedded coordinate updates, the stopping rule and Lyapunov descent diagnostics."""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from math import inf, isfinite, nan
from typing import Optional

import numpy as np

from errors import InternalInvariantError, InvalidArgumentError
from interface import SolverCallbacks
from problem import Block, BlockProblem, IterateState, TraceRecord, evaluate_objective
from update_rules import (
    BlockOutcome,
    Embedded,
    Proximal,
    ProxLinear,
    embedded_update,
    estimate_partial_lipschitz,
    proximal_step,
    prox_linear_step,
    rule_number,
)
from utils import relative_change

logger = logging.getLogger(__name__)

DEFAULT_STOP_TOL = 1e-4
DEFAULT_DESCENT_SLACK = 1e-8

CLASSICAL_NAMES = {"1-4": "PAM", "2-5": "PALM"}

# which blocks carry a Lyapunov correction term
PHI_TERMS = {
    "3-6": (True, True),
    "1-6": (False, True),
    "2-6": (False, True),
    "3-4": (True, False),
    "3-5": (True, False),
}


class SolveStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class SolverConfig:
    rule_x: object
    rule_y: object
    max_outer: int = 500
    stop_tol: float = DEFAULT_STOP_TOL
    phi_monitoring: bool = True
    descent_slack: float = DEFAULT_DESCENT_SLACK
    seed: int = 0
    keep_history: bool = False

    def __post_init__(self):
        for name, rule in (("rule_x", self.rule_x), ("rule_y", self.rule_y)):
            if not isinstance(rule, (Proximal, ProxLinear, Embedded)):
                raise InvalidArgumentError(f"{name} must be an update rule, got {type(rule).__name__}")
        if self.max_outer < 1:
            raise InvalidArgumentError(f"max_outer must be at least 1, got {self.max_outer}")
        if not self.stop_tol > 0:
            raise InvalidArgumentError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.descent_slack < 0:
            raise InvalidArgumentError("descent_slack must be non-negative")

    def rule(self, block: Block):
        return self.rule_x if block is Block.X else self.rule_y

    @property
    def combination(self) -> str:
        return f"{rule_number(self.rule_x, Block.X)}-{rule_number(self.rule_y, Block.Y)}"

    @property
    def is_embedded(self) -> bool:
        return isinstance(self.rule_x, Embedded) or isinstance(self.rule_y, Embedded)


def combination_label(config: SolverConfig) -> str:
    """Code such as "3-6" for embedded combinations, the classical method name otherwise."""
    code = config.combination
    if config.is_embedded:
        return code
    return CLASSICAL_NAMES.get(code, f"CD({code})")


@dataclass
class SolveResult:
    final_x: np.ndarray
    final_y: np.ndarray
    trace: list
    status: SolveStatus
    combination_label: str
    combination: str = ""
    descent_margin: float = nan
    descent_violations: list = field(default_factory=list)
    wall_time_s: float = 0.0
    history: Optional[list] = None
    # (x, y) candidates of accepted embedded updates per iteration, None elsewhere
    candidates: Optional[list] = None

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    @property
    def outer_iterations(self) -> int:
        return len(self.trace)

    @property
    def total_inner_steps(self) -> int:
        return sum(record.inner_steps_x + record.inner_steps_y for record in self.trace)

    @property
    def final_objective(self) -> float:
        return self.trace[-1].objective if self.trace else nan


class NullCallbacks(SolverCallbacks):
    def on_start(self, problem_name, label):
        pass

    def on_block_update(self, iteration, block, outcome):
        pass

    def on_iteration(self, record):
        pass

    def on_fallback(self, iteration, block, message):
        pass

    def on_stop(self, result):
        pass


def relative_changes(state: IterateState, psi_t: float, psi_prev: float) -> tuple[float, float, float]:
    """Relative changes of x, y and Ψ between the last two iterates, older values as denominators."""
    return (
        relative_change(state.x_t, state.x_prev),
        relative_change(state.y_t, state.y_prev),
        relative_change(psi_t, psi_prev),
    )


def stopping_check(state: IterateState, psi_t: float, psi_prev: float, tol: float) -> bool:
    """True iff the largest of the three relative changes is below `tol`."""
    return max(relative_changes(state, psi_t, psi_prev)) < tol


def lyapunov_phi(psi: float, state: IterateState, combination: str, C_x=0.0, C_y=0.0, eta_1=1.0, eta_2=1.0) -> float:
    """Φ(z^t, z^{t-1}): Ψ plus C²/η‖u^t − u^{t-1}‖² for every embedded block of the combination."""
    terms = _phi_terms(combination)
    phi = psi
    if terms[0]:
        phi += C_x**2 / eta_1 * state.step_norm(Block.X) ** 2
    if terms[1]:
        phi += C_y**2 / eta_2 * state.step_norm(Block.Y) ** 2
    return phi


def _phi_terms(combination: str) -> tuple[bool, bool]:
    if combination in PHI_TERMS:
        return PHI_TERMS[combination]
    if _classical_code(combination) is not None:
        return (False, False)
    raise InvalidArgumentError(f"unknown combination '{combination}'")


def _classical_code(combination: str) -> Optional[str]:
    names = {name: code for code, name in CLASSICAL_NAMES.items()}
    if combination in names:
        return names[combination]
    code = combination[3:-1] if combination.startswith("CD(") and combination.endswith(")") else combination
    parts = code.split("-")
    if len(parts) == 2 and parts[0] in ("1", "2") and parts[1] in ("4", "5"):
        return code
    return None


def _min_gap(gamma, lipschitz) -> float:
    gammas = np.atleast_1d(np.asarray(gamma, dtype=float))
    lipschitzes = np.atleast_1d(np.asarray(lipschitz, dtype=float))
    if gammas.size == 0:
        return inf
    return float(np.min((gammas - lipschitzes) / 2))


def descent_margin_a(combination: str, params: dict) -> float:
    """Sufficient-descent constant a of a combination.

    `params` holds per-block entries suffixed `_x`/`_y`: `zeta` for proximal blocks,
    `gamma` and `lipschitz` (scalars or per-iteration sequences) for prox-linear blocks,
    `C` and `eta` for embedded blocks. Optional `fallback_x`/`fallback_y` list the
    (γ, L) pairs of prox-linear fallbacks taken by an embedded block.

    Raises:
        InvalidArgumentError: if the combination is unknown or a ≤ 0.
    """
    code = _classical_code(combination) or combination
    if code not in PHI_TERMS and _classical_code(code) is None:
        raise InvalidArgumentError(f"unknown combination '{combination}'")
    terms = []
    for number, suffix in zip(code.split("-"), ("x", "y")):
        kind = (int(number) - 1) % 3 + 1
        if kind == 1:
            terms.append(params[f"zeta_{suffix}"] / 2)
        elif kind == 2:
            terms.append(_min_gap(params[f"gamma_{suffix}"], params[f"lipschitz_{suffix}"]))
        else:
            C, eta = params[f"C_{suffix}"], params[f"eta_{suffix}"]
            if not 2 * C < eta:
                raise InvalidArgumentError(f"embedded block {suffix} violates 2C < eta (C={C}, eta={eta})")
            terms.append(eta / 4 - C**2 / eta)
            for gamma, lipschitz in params.get(f"fallback_{suffix}", []):
                terms.append((gamma - lipschitz) / 2 - C**2 / eta)
    a = min(terms)
    if not a > 0:
        raise InvalidArgumentError(f"descent constant of '{combination}' is not positive: {a}")
    return a


def check_sufficient_descent(trace: list, a: float, slack=DEFAULT_DESCENT_SLACK) -> list[int]:
    """Iterations t ≥ 2 where Φ(z^t, z^{t-1}) − Φ(z^{t+1}, z^t) < a‖z^{t+1} − z^t‖² − slack·(1 + |Φ|)."""
    if len(trace) < 3:
        raise InvalidArgumentError(f"descent check needs at least 3 trace records, got {len(trace)}")
    violations = []
    for current, following in zip(trace, trace[1:]):
        if current.iteration < 2:
            continue
        decrease = current.phi - following.phi
        step = following.step_norm_x**2 + following.step_norm_y**2
        if decrease < a * step - slack * (1 + abs(current.phi)):
            violations.append(current.iteration)
    return violations


class Solver:
    """Cyclic two-block solver applying the configured update rule to x, then to y."""

    certified = True

    def __init__(self, config: SolverConfig, callbacks: Optional[SolverCallbacks] = None, name=None):
        self.config = config
        self.callbacks = callbacks if callbacks is not None else NullCallbacks()
        self.name = name

    @property
    def label(self) -> str:
        return combination_label(self.config)

    def update_block(self, problem: BlockProblem, block: Block, state: IterateState, other: np.ndarray) -> BlockOutcome:
        rule = self.config.rule(block)
        number = rule_number(rule, block)
        eps = state.lookback(block)
        if isinstance(rule, Proximal):
            value = proximal_step(problem, block, state, rule.zeta, other=other)
            return BlockOutcome(value, str(number), eps=eps)
        if isinstance(rule, ProxLinear):
            lipschitz = estimate_partial_lipschitz(problem, block, other)
            value = prox_linear_step(problem, block, state, lipschitz, rule.safety, other=other)
            return BlockOutcome(value, str(number), gamma=rule.safety * lipschitz, lipschitz=lipschitz, eps=eps)
        result = embedded_update(problem, block, state, rule, other=other)
        if result.fallback:
            self.callbacks.on_fallback(
                state.iteration + 1,
                block,
                f"criterion unmet after {rule.k_max} propagations, prox-linear fallback",
            )
            return BlockOutcome(
                result.iterate, str(number - 1), 0.0, result.inner_steps,
                result.gamma, result.lipschitz, eps, result.estimate,
            )
        return BlockOutcome(
            result.iterate, str(number), result.estimate.e_norm, result.inner_steps, eps=eps, estimate=result.estimate
        )

    def iterate(self, problem: BlockProblem, state: IterateState) -> tuple[BlockOutcome, BlockOutcome]:
        """One outer iteration: x first with y^t frozen, then y with the new x."""
        outcome_x = self.update_block(problem, Block.X, state, state.y_t)
        outcome_y = self.update_block(problem, Block.Y, state, outcome_x.iterate)
        return outcome_x, outcome_y

    def phi(self, psi: float, state: IterateState) -> float:
        if not self.certified:
            return psi
        rule_x, rule_y = self.config.rule_x, self.config.rule_y
        return lyapunov_phi(
            psi,
            state,
            self.config.combination,
            getattr(rule_x, "C", 0.0),
            getattr(rule_y, "C", 0.0),
            getattr(rule_x, "eta", 1.0),
            getattr(rule_y, "eta", 1.0),
        )

    def descent_margin(self, trace: list) -> float:
        """a for this run, with iteration-dependent prox-linear weights taken from the trace; 0 when uncertified."""
        if not self.certified:
            return 0.0
        params = {}
        for suffix, rule in (("x", self.config.rule_x), ("y", self.config.rule_y)):
            applied = [getattr(record, f"rule_{suffix}") for record in trace]
            gammas = [getattr(record, f"gamma_{suffix}") for record in trace]
            lipschitzes = [getattr(record, f"lipschitz_{suffix}") for record in trace]
            if isinstance(rule, Proximal):
                params[f"zeta_{suffix}"] = rule.zeta
            elif isinstance(rule, ProxLinear):
                params[f"gamma_{suffix}"] = gammas
                params[f"lipschitz_{suffix}"] = lipschitzes
            else:
                number = str(rule_number(rule, Block.X if suffix == "x" else Block.Y))
                params[f"C_{suffix}"] = rule.C
                params[f"eta_{suffix}"] = rule.eta
                params[f"fallback_{suffix}"] = [
                    (gamma, lipschitz)
                    for kind, gamma, lipschitz in zip(applied, gammas, lipschitzes)
                    if kind != number
                ]
        return descent_margin_a(self.config.combination, params)

    def solve(self, problem: BlockProblem, init_x: np.ndarray, init_y: np.ndarray) -> SolveResult:
        """Run outer iterations until the stopping rule holds or `max_outer` is reached.

        Raises:
            InvalidArgumentError: if the initial point is infeasible.
            InternalInvariantError: if an accepted iterate leaves the feasible set.
        """
        config = self.config
        state = IterateState.initial(init_x, init_y)
        psi = evaluate_objective(problem, state.x_t, state.y_t)
        if not isfinite(psi):
            raise InvalidArgumentError("initial point is infeasible (objective is +inf)")
        label = self.name or self.label
        logger.info(f"solving '{problem.name}' with {label} ({config.combination}), Ψ⁰={psi:.6e}")
        self.callbacks.on_start(problem.name, label)

        history = [(state.x_t, state.y_t)] if config.keep_history else None
        candidates = [] if config.keep_history else None
        trace = []
        status = SolveStatus.MAX_ITERATIONS
        fallbacks = 0
        start = time.perf_counter()
        for t in range(1, config.max_outer + 1):
            iteration_start = time.perf_counter()
            outcome_x, outcome_y = self.iterate(problem, state)
            self.callbacks.on_block_update(t, Block.X, outcome_x)
            self.callbacks.on_block_update(t, Block.Y, outcome_y)
            new_state = state.rotate(outcome_x.iterate, outcome_y.iterate)
            psi_new = evaluate_objective(problem, new_state.x_t, new_state.y_t)
            if not isfinite(psi_new):
                raise InternalInvariantError(f"iterate {t} of {label} left the feasible set")
            rel_x, rel_y, rel_obj = relative_changes(new_state, psi_new, psi)
            record = TraceRecord(
                iteration=t,
                objective=psi_new,
                phi=self.phi(psi_new, new_state) if config.phi_monitoring else nan,
                step_norm_x=new_state.step_norm(Block.X),
                step_norm_y=new_state.step_norm(Block.Y),
                rel_change_x=rel_x,
                rel_change_y=rel_y,
                rel_change_obj=rel_obj,
                err_norm_x=outcome_x.err_norm,
                err_norm_y=outcome_y.err_norm,
                eps_x=new_state.eps_x,
                eps_y=new_state.eps_y,
                inner_steps_x=outcome_x.inner_steps,
                inner_steps_y=outcome_y.inner_steps,
                rule_x=outcome_x.rule,
                rule_y=outcome_y.rule,
                gamma_x=outcome_x.gamma,
                lipschitz_x=outcome_x.lipschitz,
                gamma_y=outcome_y.gamma,
                lipschitz_y=outcome_y.lipschitz,
                wall_time_s=time.perf_counter() - iteration_start,
            )
            fallbacks += _is_fallback(config.rule_x, Block.X, record.rule_x)
            fallbacks += _is_fallback(config.rule_y, Block.Y, record.rule_y)
            trace.append(record)
            self.callbacks.on_iteration(record)
            logger.debug(
                f"iter {t}: Ψ={psi_new:.6e} rel=({rel_x:.2e}, {rel_y:.2e}, {rel_obj:.2e}) "
                f"‖e‖=({record.err_norm_x:.2e}, {record.err_norm_y:.2e}) K=({record.inner_steps_x}, {record.inner_steps_y})"
            )
            state, psi = new_state, psi_new
            if history is not None:
                history.append((state.x_t, state.y_t))
                candidates.append((
                    _accepted_candidate(config.rule_x, Block.X, outcome_x),
                    _accepted_candidate(config.rule_y, Block.Y, outcome_y),
                ))
            if max(rel_x, rel_y, rel_obj) < config.stop_tol:
                status = SolveStatus.CONVERGED
                break

        margin = self.descent_margin(trace)
        violations = []
        if config.phi_monitoring and len(trace) >= 3:
            violations = check_sufficient_descent(trace, margin, config.descent_slack)
        if fallbacks:
            logger.warning(f"{label}: {fallbacks} embedded updates fell back to prox-linear steps")
        if violations:
            logger.warning(f"{label}: sufficient descent violated at iterations {violations}")
        result = SolveResult(
            final_x=state.x_t,
            final_y=state.y_t,
            trace=trace,
            status=status,
            combination_label=self.label,
            combination=config.combination,
            descent_margin=margin,
            descent_violations=violations,
            wall_time_s=time.perf_counter() - start,
            history=history,
            candidates=candidates,
        )
        logger.info(f"{label} stopped with status {status.value} after {len(trace)} iterations, Ψ={psi:.6e}")
        self.callbacks.on_stop(result)
        return result


def _is_fallback(rule, block: Block, applied: str) -> bool:
    return isinstance(rule, Embedded) and applied != str(rule_number(rule, block))


def _accepted_candidate(rule, block: Block, outcome: BlockOutcome) -> Optional[np.ndarray]:
    if not isinstance(rule, Embedded) or _is_fallback(rule, block, outcome.rule):
        return None
    return outcome.estimate.candidate


def solve(problem: BlockProblem, config: SolverConfig, init_x, init_y, callbacks=None) -> SolveResult:
    return Solver(config, callbacks).solve(problem, init_x, init_y)
