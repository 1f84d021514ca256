"""Reference solvers: PALM, the inertial variants iPALM and BCU, and the project-after-solve INV dictionary update."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from embedded_solvers import sphere_project
from errors import InvalidArgumentError, NumericalFailureError
from interface import SolverCallbacks
from problem import Block, BlockProblem, IterateState
from tecu import Solver, SolverConfig
from update_rules import (
    BlockOutcome,
    ProxLinear,
    error_estimate,
    estimate_partial_lipschitz,
    prox_linear_from,
    prox_linear_step,
)

logger = logging.getLogger(__name__)

DEFAULT_SAFETY = 1.5


@dataclass(frozen=True)
class InertialConfig:
    beta: float = 0.3

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise InvalidArgumentError(f"extrapolation weight must lie in [0, 1), got {self.beta}")


def _extrapolate(state: IterateState, block: Block, beta: float) -> np.ndarray:
    current, previous = state.current(block), state.previous(block)
    if previous is None:
        return current
    return current + beta * (current - previous)


def _prox_linear_outcome(problem, block, state, other, safety) -> BlockOutcome:
    lipschitz = estimate_partial_lipschitz(problem, block, other)
    value = prox_linear_step(problem, block, state, lipschitz, safety, other=other)
    return BlockOutcome(value, "2" if block is Block.X else "5", gamma=safety * lipschitz, lipschitz=lipschitz)


def palm_iterate(problem: BlockProblem, state: IterateState, safety=DEFAULT_SAFETY) -> tuple[BlockOutcome, BlockOutcome]:
    """Prox-linear x-step, then prox-linear y-step against the new x."""
    outcome_x = _prox_linear_outcome(problem, Block.X, state, state.y_t, safety)
    outcome_y = _prox_linear_outcome(problem, Block.Y, state, outcome_x.iterate, safety)
    return outcome_x, outcome_y


def _inertial_block(problem, block, state, other, inertial, safety, anchor_at_extrapolation) -> BlockOutcome:
    lipschitz = estimate_partial_lipschitz(problem, block, other)
    gamma = safety * lipschitz
    extrapolated = _extrapolate(state, block, inertial.beta)
    point = extrapolated if anchor_at_extrapolation else state.current(block)
    value = prox_linear_from(problem, block, point, extrapolated, other, gamma)
    return BlockOutcome(value, "2" if block is Block.X else "5", gamma=gamma, lipschitz=lipschitz)


def ipalm_iterate(
    problem: BlockProblem, state: IterateState, inertial: InertialConfig, safety=DEFAULT_SAFETY
) -> tuple[BlockOutcome, BlockOutcome]:
    """Extrapolate each block by β(u^t − u^{t-1}) and take the prox-linear step from there."""
    outcome_x = _inertial_block(problem, Block.X, state, state.y_t, inertial, safety, True)
    outcome_y = _inertial_block(problem, Block.Y, state, outcome_x.iterate, inertial, safety, True)
    return outcome_x, outcome_y


def bcu_iterate(
    problem: BlockProblem, state: IterateState, inertial: InertialConfig, safety=DEFAULT_SAFETY
) -> tuple[BlockOutcome, BlockOutcome]:
    """Gradient at the extrapolated point, prox anchored at the current iterate."""
    outcome_x = _inertial_block(problem, Block.X, state, state.y_t, inertial, safety, False)
    outcome_y = _inertial_block(problem, Block.Y, state, outcome_x.iterate, inertial, safety, False)
    return outcome_x, outcome_y


def inv_d_update(D_cur: np.ndarray, W: np.ndarray, Y: np.ndarray, eta: float) -> np.ndarray:
    """Solve the dictionary subproblem without the unit-norm constraint, then project onto it."""
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    m = D_cur.shape[1]
    try:
        factor = cho_factor(W.T @ W + eta * np.eye(m))
    except LinAlgError as error:
        raise NumericalFailureError(f"INV system is singular: {error}") from error
    D = cho_solve(factor, (Y @ W + eta * D_cur).T).T
    return sphere_project(D)


def _palm_config(max_outer, stop_tol, safety, **kwargs) -> SolverConfig:
    return SolverConfig(ProxLinear(safety), ProxLinear(safety), max_outer=max_outer, stop_tol=stop_tol, **kwargs)


class PalmSolver(Solver):
    """PALM, i.e. the "2-5" combination."""

    def __init__(self, max_outer=500, stop_tol=1e-4, safety=DEFAULT_SAFETY, callbacks: Optional[SolverCallbacks] = None, **kwargs):
        super().__init__(_palm_config(max_outer, stop_tol, safety, **kwargs), callbacks, name="PALM")
        self.safety = safety

    def iterate(self, problem, state):
        return palm_iterate(problem, state, self.safety)


class InertialSolver(Solver):
    """iPALM or BCU; their descent is not certified, so only Ψ monotonicity is monitored."""

    certified = False

    def __init__(
        self, variant="iPALM", inertial: Optional[InertialConfig] = None, max_outer=500, stop_tol=1e-4,
        safety=DEFAULT_SAFETY, callbacks: Optional[SolverCallbacks] = None, **kwargs,
    ):
        if variant not in ("iPALM", "BCU"):
            raise InvalidArgumentError(f"unknown inertial variant '{variant}'")
        if inertial is None:
            inertial = InertialConfig(0.3 if variant == "iPALM" else 0.5)
        super().__init__(_palm_config(max_outer, stop_tol, safety, **kwargs), callbacks, name=variant)
        self.variant = variant
        self.inertial = inertial
        self.safety = safety

    @property
    def label(self) -> str:
        return self.variant

    def iterate(self, problem, state):
        if self.variant == "iPALM":
            return ipalm_iterate(problem, state, self.inertial, self.safety)
        return bcu_iterate(problem, state, self.inertial, self.safety)


class InvSolver(Solver):
    """Prox-linear codes with the INV dictionary update; err_norm reports the unguarded subproblem residual."""

    certified = False

    def __init__(
        self, Y: np.ndarray, eta=1.0, max_outer=500, stop_tol=1e-4, safety=DEFAULT_SAFETY,
        callbacks: Optional[SolverCallbacks] = None, **kwargs,
    ):
        super().__init__(_palm_config(max_outer, stop_tol, safety, **kwargs), callbacks, name="INV")
        self.Y = Y
        self.eta = eta
        self.safety = safety

    @property
    def label(self) -> str:
        return "INV"

    def iterate(self, problem, state):
        outcome_x = _prox_linear_outcome(problem, Block.X, state, state.y_t, self.safety)
        W = outcome_x.iterate
        D = inv_d_update(state.y_t, W, self.Y, self.eta)
        estimate = error_estimate(problem, Block.Y, D, state, self.eta, other=W)
        outcome_y = BlockOutcome(D, "INV", estimate.e_norm, eps=state.lookback(Block.Y), estimate=estimate)
        return outcome_x, outcome_y
