"""Block update mechanisms: proximal, prox-linear and task-embedded updates with computable error control."""

import logging
from dataclasses import dataclass
from math import inf, isinf, nan
from typing import NamedTuple, Optional

import numpy as np

from errors import InvalidArgumentError, UnsupportedUpdateError
from interface import EmbeddedOperator
from problem import Block, BlockProblem, IterateState
from utils import frobenius, power_iteration

logger = logging.getLogger(__name__)

# power-iteration estimates are inflated by this factor to upper-bound the spectral norm
LIPSCHITZ_INFLATION = 1.01
# keeps γ = σL positive when the coupling vanishes (e.g. W = 0)
LIPSCHITZ_FLOOR = 1e-8


@dataclass(frozen=True)
class Proximal:
    """Exact proximal block update with weight ζ > 0."""

    zeta: float = 1.0
    number = 1

    def __post_init__(self):
        if not self.zeta > 0:
            raise InvalidArgumentError(f"proximal weight zeta must be positive, got {self.zeta}")


@dataclass(frozen=True)
class ProxLinear:
    """Linearized proximal update with step weight γ = σL."""

    safety: float = 1.5
    number = 2

    def __post_init__(self):
        if not self.safety > 1:
            raise InvalidArgumentError(f"lipschitz safety must exceed 1, got {self.safety}")


@dataclass(frozen=True)
class Embedded:
    """Task-embedded update: repeated operator propagation accepted under ‖e‖ ≤ C·ε."""

    operator: EmbeddedOperator
    C: float = 0.4
    eta: float = 1.0
    k_max: int = 20
    check_every: int = 1
    fallback_safety: float = 1.5
    number = 3

    def __post_init__(self):
        if not (0 < 2 * self.C < self.eta):
            raise InvalidArgumentError(
                f"error control needs 0 < 2C < eta, got C={self.C}, eta={self.eta}"
            )
        if self.k_max < 1 or self.check_every < 1:
            raise InvalidArgumentError("k_max and check_every must be at least 1")
        if not self.fallback_safety > 1:
            raise InvalidArgumentError("fallback safety must exceed 1")
        if self.eta < 1:
            logger.warning(
                f"eta={self.eta} < 1: the sufficient-descent certificate of embedded updates is not guaranteed"
            )

    def fallback_gamma(self, lipschitz: float) -> float:
        """Fallback step weight, large enough that (γ − L)/2 exceeds C²/η."""
        return max(self.fallback_safety * lipschitz, lipschitz + 4 * self.C**2 / self.eta)


UpdateRule = Proximal | ProxLinear | Embedded


def rule_number(rule, block: Block) -> int:
    """1/2/3 for the x-block, 4/5/6 for the y-block."""
    return rule.number + (3 if block is Block.Y else 0)


@dataclass
class ErrorEstimate:
    candidate: np.ndarray
    tilde_u: np.ndarray
    e: np.ndarray
    e_norm: float

    @classmethod
    def exact(cls, iterate: np.ndarray) -> "ErrorEstimate":
        return cls(candidate=iterate, tilde_u=iterate, e=np.zeros_like(iterate), e_norm=0.0)


class EmbeddedResult(NamedTuple):
    iterate: np.ndarray
    estimate: ErrorEstimate
    inner_steps: int
    fallback: bool = False
    gamma: float = nan
    lipschitz: float = nan


@dataclass
class BlockOutcome:
    """What one block update produced, as the engine logs it."""

    iterate: np.ndarray
    rule: str
    err_norm: float = 0.0
    inner_steps: int = 1
    gamma: float = nan
    lipschitz: float = nan
    eps: float = inf
    estimate: Optional[ErrorEstimate] = None


def _frozen_other(state: IterateState, block: Block, other) -> np.ndarray:
    if other is not None:
        return other
    return state.current(block.other)


def estimate_partial_lipschitz(problem: BlockProblem, block: Block, frozen_other: np.ndarray) -> float:
    """Upper estimate of the Lipschitz constant of the block's partial gradient.

    A registered bound is returned as is; a quadratic coupling's Gram matrix goes through
    power iteration (relative tolerance 1e-4) and is inflated by 1%.
    """
    view = problem.view(block)
    if view.lipschitz_bound is not None:
        return max(float(view.lipschitz_bound(frozen_other)), LIPSCHITZ_FLOOR)
    if view.gram is not None:
        estimate = power_iteration(view.gram(frozen_other), tol=1e-4, max_iter=500)
        return max(LIPSCHITZ_INFLATION * estimate, LIPSCHITZ_FLOOR)
    raise UnsupportedUpdateError(
        f"problem '{problem.name}' registers no Lipschitz estimate for block {block.value}"
    )


def proximal_step(
    problem: BlockProblem, block: Block, state: IterateState, zeta: float, other=None
) -> np.ndarray:
    """Exact minimizer of the block's proximal subproblem with weight ζ."""
    if not zeta > 0:
        raise InvalidArgumentError(f"zeta must be positive, got {zeta}")
    view = problem.view(block)
    if view.exact_prox is None:
        raise UnsupportedUpdateError(
            f"problem '{problem.name}' has no exact proximal solver for block {block.value}"
        )
    return view.exact_prox(state.current(block), _frozen_other(state, block, other), zeta)


def prox_linear_from(
    problem: BlockProblem, block: Block, point: np.ndarray, grad_point: np.ndarray,
    other: np.ndarray, gamma: float,
) -> np.ndarray:
    """prox^γ(point − ∇H(grad_point)/γ); shared by PALM and its inertial variants."""
    view = problem.view(block)
    return view.prox(point - view.grad(grad_point, other) / gamma, gamma)


def prox_linear_step(
    problem: BlockProblem, block: Block, state: IterateState, lipschitz: float,
    safety: float, other=None,
) -> np.ndarray:
    """Linearized proximal step at the current iterate with γ = σL."""
    if not lipschitz > 0:
        raise InvalidArgumentError(f"lipschitz estimate must be positive, got {lipschitz}")
    if not safety > 1:
        raise InvalidArgumentError(f"safety must exceed 1, got {safety}")
    current = state.current(block)
    return prox_linear_from(
        problem, block, current, current, _frozen_other(state, block, other), safety * lipschitz
    )


def error_estimate(
    problem: BlockProblem, block: Block, candidate: np.ndarray, state: IterateState,
    eta: float, other=None,
) -> ErrorEstimate:
    """Computable residual of the block subproblem's first-order condition.

    With 𝒫(u) = (1 − η)u − ∇H(u), ũ = prox¹(η·u^{t-1} + 𝒫(candidate)) and
    e = 𝒫(candidate) − 𝒫(ũ), so that e ∈ ∂f(ũ) + ∇H(ũ) + η(ũ − u^{t-1}).
    """
    view = problem.view(block)
    anchor = state.current(block)
    frozen = _frozen_other(state, block, other)

    def propagate(u):
        return (1 - eta) * u - view.grad(u, frozen)

    p_candidate = propagate(candidate)
    tilde_u = view.prox(eta * anchor + p_candidate, 1.0)
    e = p_candidate - propagate(tilde_u)
    return ErrorEstimate(candidate=candidate, tilde_u=tilde_u, e=e, e_norm=frobenius(e))


def criterion_check(e_norm: float, C: float, eps: float) -> bool:
    """‖e‖ ≤ C·ε, vacuously true while ε is +inf."""
    if isinf(eps):
        return True
    return e_norm <= C * eps


def embedded_update(
    problem: BlockProblem, block: Block, state: IterateState, rule: Embedded, other=None
) -> EmbeddedResult:
    """Propagate the embedded operator from u^{t-1} until the error criterion accepts.

    Returns the intermediate ũ of the accepted candidate. When k_max propagations do not
    satisfy the criterion, one prox-linear step from u^{t-1} is returned instead, with a
    zero error estimate and the fallback flag set.
    """
    if not rule.eta > 2 * rule.C:
        raise InvalidArgumentError(f"eta={rule.eta} must exceed 2C={2 * rule.C}")
    anchor = state.current(block)
    frozen = _frozen_other(state, block, other)
    eps = state.lookback(block)
    operator = rule.operator
    operator.reset(anchor, frozen, rule.eta)

    current = anchor
    for k in range(1, rule.k_max + 1):
        current = operator.step(current, frozen, anchor, rule.eta)
        if k % rule.check_every != 0 and k != rule.k_max:
            continue
        estimate = error_estimate(problem, block, current, state, rule.eta, other=frozen)
        if criterion_check(estimate.e_norm, rule.C, eps):
            logger.debug(
                f"block {block.value}: accepted after {k} propagations, ‖e‖={estimate.e_norm:.3e}, ε={eps:.3e}"
            )
            return EmbeddedResult(estimate.tilde_u, estimate, k)

    lipschitz = estimate_partial_lipschitz(problem, block, frozen)
    gamma = rule.fallback_gamma(lipschitz)
    iterate = prox_linear_from(problem, block, anchor, anchor, frozen, gamma)
    logger.debug(
        f"block {block.value}: criterion unmet after {rule.k_max} propagations, prox-linear fallback"
    )
    return EmbeddedResult(
        iterate, ErrorEstimate.exact(iterate), rule.k_max + 1, True, gamma, lipschitz
    )
