"""Two-block problem abstraction: oracles for Ψ(x, y) = f(x) + g(y) + H(x, y), iterate bookkeeping and trace records."""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from math import inf, isfinite, nan
from typing import Callable, Optional

import numpy as np

from errors import InvalidArgumentError, OracleError
from utils import distance, frobenius

logger = logging.getLogger(__name__)

# per-entry tolerance for indicator membership tests
FEASIBILITY_TOL = 1e-10
# central difference step of the gradient check
FD_STEP = 1e-5
FD_REL_TOL = 1e-4
PROX_TOL = 1e-8


class Block(Enum):
    X = "x"
    Y = "y"

    @property
    def other(self) -> "Block":
        return Block.Y if self is Block.X else Block.X


@dataclass(frozen=True)
class BlockProblem:
    """Oracle bundle of one concrete task.

    `exact_prox_*` solve the proximal block subproblem min f(u) + H(u, v) + ζ/2‖u − u^t‖²
    exactly when such a solver exists. `gram_*` return a symmetric matrix whose spectral
    norm is the partial Lipschitz constant (quadratic couplings), `lipschitz_bound_*`
    return a registered bound directly. `prox_residual_*(out, v, τ)` measure, without
    calling `prox_*`, how far `out` is from solving the prox of f (or g) at v with weight τ.
    """

    name: str
    x_shape: tuple
    y_shape: tuple
    f_value: Callable[[np.ndarray], float]
    g_value: Callable[[np.ndarray], float]
    h_value: Callable[[np.ndarray, np.ndarray], float]
    h_grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h_grad_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    prox_f: Callable[[np.ndarray, float], np.ndarray]
    prox_g: Callable[[np.ndarray, float], np.ndarray]
    prox_residual_f: Optional[Callable] = None
    prox_residual_g: Optional[Callable] = None
    exact_prox_x: Optional[Callable] = None
    exact_prox_y: Optional[Callable] = None
    gram_x: Optional[Callable] = None
    gram_y: Optional[Callable] = None
    lipschitz_bound_x: Optional[Callable] = None
    lipschitz_bound_y: Optional[Callable] = None
    h_convex_in_blocks: bool = True

    def view(self, block: Block) -> "BlockView":
        """The oracles seen from one block, with the other block frozen."""
        if block is Block.X:
            return BlockView(
                block=block,
                shape=tuple(self.x_shape),
                value=self.f_value,
                grad=lambda u, other: self.h_grad_x(u, other),
                prox=self.prox_f,
                prox_residual=self.prox_residual_f,
                exact_prox=self.exact_prox_x,
                gram=self.gram_x,
                lipschitz_bound=self.lipschitz_bound_x,
                coupling=lambda u, other: self.h_value(u, other),
            )
        return BlockView(
            block=block,
            shape=tuple(self.y_shape),
            value=self.g_value,
            grad=lambda u, other: self.h_grad_y(other, u),
            prox=self.prox_g,
            prox_residual=self.prox_residual_g,
            exact_prox=self.exact_prox_y,
            gram=self.gram_y,
            lipschitz_bound=self.lipschitz_bound_y,
            coupling=lambda u, other: self.h_value(other, u),
        )


@dataclass(frozen=True)
class BlockView:
    block: Block
    shape: tuple
    value: Callable
    grad: Callable
    prox: Callable
    prox_residual: Optional[Callable]
    exact_prox: Optional[Callable]
    gram: Optional[Callable]
    lipschitz_bound: Optional[Callable]
    coupling: Callable

    def partial_objective(self, u: np.ndarray, other: np.ndarray) -> float:
        """f(u) + H(u, other) for the x-block, g(u) + H(other, u) for the y-block."""
        return self.value(u) + self.coupling(u, other)


@dataclass(frozen=True)
class IterateState:
    """Current and two previous iterates of both blocks, plus the ε lookback of the error criterion.

    After iteration t the state holds x^t, x^{t-1}, x^{t-2} and ε^t = ‖x^{t-1} − x^{t-2}‖,
    the budget that governed the update producing x^t (+inf while t < 2).
    """

    x_t: np.ndarray
    y_t: np.ndarray
    x_prev: Optional[np.ndarray] = None
    y_prev: Optional[np.ndarray] = None
    x_prev2: Optional[np.ndarray] = None
    y_prev2: Optional[np.ndarray] = None
    eps_x: float = inf
    eps_y: float = inf
    iteration: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray, y0: np.ndarray) -> "IterateState":
        return cls(x_t=np.array(x0, dtype=float), y_t=np.array(y0, dtype=float))

    def current(self, block: Block) -> np.ndarray:
        return self.x_t if block is Block.X else self.y_t

    def previous(self, block: Block) -> Optional[np.ndarray]:
        return self.x_prev if block is Block.X else self.y_prev

    def eps(self, block: Block) -> float:
        return self.eps_x if block is Block.X else self.eps_y

    def lookback(self, block: Block) -> float:
        """ε for the next update of `block`: ‖u^t − u^{t-1}‖, or +inf while the next iteration is below 2."""
        if self.iteration + 1 < 2:
            return inf
        return distance(self.current(block), self.previous(block))

    def rotate(self, x_new: np.ndarray, y_new: np.ndarray) -> "IterateState":
        """Shift every block history by one slot and recompute ε from the stored differences."""
        x_prev2, y_prev2 = self.x_prev, self.y_prev
        return replace(
            self,
            x_t=x_new,
            y_t=y_new,
            x_prev=self.x_t,
            y_prev=self.y_t,
            x_prev2=x_prev2,
            y_prev2=y_prev2,
            eps_x=distance(self.x_t, x_prev2),
            eps_y=distance(self.y_t, y_prev2),
            iteration=self.iteration + 1,
        )

    def step_norm(self, block: Block) -> float:
        """‖u^t − u^{t-1}‖ (zero before the first update)."""
        previous = self.previous(block)
        if previous is None:
            return 0.0
        return frobenius(self.current(block) - previous)


@dataclass
class TraceRecord:
    """Per-outer-iteration log entry."""

    iteration: int
    objective: float
    phi: float = nan
    step_norm_x: float = 0.0
    step_norm_y: float = 0.0
    rel_change_x: float = nan
    rel_change_y: float = nan
    rel_change_obj: float = nan
    err_norm_x: float = 0.0
    err_norm_y: float = 0.0
    eps_x: float = inf
    eps_y: float = inf
    inner_steps_x: int = 0
    inner_steps_y: int = 0
    rule_x: str = ""
    rule_y: str = ""
    gamma_x: float = nan
    lipschitz_x: float = nan
    gamma_y: float = nan
    lipschitz_y: float = nan
    wall_time_s: float = 0.0


def _check_shape(name: str, u: np.ndarray, shape: tuple):
    if tuple(np.shape(u)) != tuple(shape):
        raise InvalidArgumentError(
            f"{name} has shape {tuple(np.shape(u))}, expected {tuple(shape)}"
        )


def evaluate_objective(problem: BlockProblem, x: np.ndarray, y: np.ndarray) -> float:
    """Ψ(x, y) = f(x) + g(y) + H(x, y); +inf iff an indicator constraint is violated."""
    _check_shape("x", x, problem.x_shape)
    _check_shape("y", y, problem.y_shape)
    f = problem.f_value(x)
    g = problem.g_value(y)
    if not (isfinite(f) and isfinite(g)):
        return inf
    return float(f + g + problem.h_value(x, y))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> list:
        return [check for check in self.checks if not check.passed]


def _call(oracle: str, sample: int, fn, *args):
    try:
        return fn(*args)
    except Exception as error:
        raise OracleError(oracle, sample, error) from error


def _finite_difference_gradient(fn, u: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(u, dtype=float)
    flat = u.reshape(-1).astype(float)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = fn(flat.reshape(u.shape))
        flat[i] = original - step
        lower = fn(flat.reshape(u.shape))
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2 * step)
    return grad


def _gradient_check(view: BlockView, u, other, sample: int) -> CheckResult:
    name = f"grad_{view.block.value}"
    analytic = _call(f"h_grad_{view.block.value}", sample, view.grad, u, other)
    numeric = _call(
        "h_value",
        sample,
        _finite_difference_gradient,
        lambda w: view.coupling(w, other),
        u,
        FD_STEP,
    )
    scale = max(frobenius(analytic), frobenius(numeric), 1e-8)
    error = frobenius(analytic - numeric) / scale
    return CheckResult(
        f"{name}[{sample}]", error < FD_REL_TOL, f"relative error {error:.3e}"
    )


def _entry_competitors(out: np.ndarray, point: np.ndarray, rng: np.random.Generator, count=16) -> list:
    """`out` with single entries moved to zero or to the input value."""
    competitors = []
    flat_out, flat_point = out.reshape(-1), point.reshape(-1)
    for i in rng.choice(flat_out.size, size=min(count, flat_out.size), replace=False):
        for value in (0.0, flat_point[i]):
            moved = flat_out.copy()
            moved[i] = value
            competitors.append(moved.reshape(out.shape))
    return competitors


def _prox_check(view: BlockView, rng: np.random.Generator, sample: int) -> CheckResult:
    """The prox output must be feasible, satisfy the registered optimality residual and beat every competitor.

    Competitors are the input, zero and single-entry moves of the output; none of them
    comes from the prox oracle itself.
    """
    name = "prox_f" if view.block is Block.X else "prox_g"
    point = rng.standard_normal(view.shape)
    tau = float(rng.uniform(0.5, 4.0))
    out = _call(name, sample, view.prox, point, tau)
    _check_shape(name, out, view.shape)

    def objective(w):
        return view.value(w) + 0.5 * tau * float(np.sum((w - point) ** 2))

    best = objective(out)
    if not isfinite(best):
        return CheckResult(f"{name}[{sample}]", False, "prox output is infeasible")
    competitors = [point, np.zeros(view.shape)] + _entry_competitors(np.asarray(out, dtype=float), point, rng)
    gap = min(objective(w) for w in competitors) - best
    if gap < -PROX_TOL * (1 + abs(best)):
        return CheckResult(f"{name}[{sample}]", False, f"a competitor improves the objective by {-gap:.3e}")
    if view.prox_residual is None:
        return CheckResult(f"{name}[{sample}]", True, f"best competitor gap {gap:.3e}")
    residual = _call(f"prox_residual_{name[-1]}", sample, view.prox_residual, out, point, tau)
    return CheckResult(
        f"{name}[{sample}]",
        residual <= PROX_TOL * (1 + frobenius(point)),
        f"optimality residual {residual:.3e}, best competitor gap {gap:.3e}",
    )


def validate_problem(problem: BlockProblem, sample_count: int, seed=0) -> ValidationReport:
    """Check gradient oracles against central differences and prox oracles against competitors.

    Args:
        problem: the oracle bundle to check.
        sample_count: number of random feasible sample points (≥ 1).
        seed: seed of the sample generator.
    """
    if sample_count < 1:
        raise InvalidArgumentError("sample_count must be at least 1")
    rng = np.random.default_rng(seed)
    report = ValidationReport()
    x_view, y_view = problem.view(Block.X), problem.view(Block.Y)
    for sample in range(sample_count):
        x = _call("prox_f", sample, problem.prox_f, rng.uniform(0, 1, problem.x_shape), 1.0)
        y = _call("prox_g", sample, problem.prox_g, rng.uniform(0, 1, problem.y_shape), 1.0)
        report.checks.append(_gradient_check(x_view, x, y, sample))
        report.checks.append(_gradient_check(y_view, y, x, sample))
        report.checks.append(_prox_check(x_view, rng, sample))
        report.checks.append(_prox_check(y_view, rng, sample))
    logger.info(
        f"validated '{problem.name}' at {sample_count} samples: {len(report.failures())} failing checks"
    )
    return report
