"""Proximal primitives and the embedded operators plugged into task-embedded block updates."""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.ndimage import uniform_filter

from errors import InvalidArgumentError, NumericalFailureError
from interface import EmbeddedOperator
from problem import Block, BlockProblem
from update_rules import estimate_partial_lipschitz

logger = logging.getLogger(__name__)

# inner step size as a fraction of 1 / (L + η)
STEP_FRACTION = 0.9


def hard_threshold(v: np.ndarray, lam: float, tau: float) -> np.ndarray:
    """Proximal map of λ‖·‖₀ at weight τ: keep entries with |v| > √(2λ/τ), zero the rest (ties included)."""
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be non-negative, got {lam}")
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be positive, got {tau}")
    v = np.asarray(v, dtype=float)
    threshold = np.sqrt(2 * lam / tau)
    return np.where(np.abs(v) > threshold, v, 0.0)


def sphere_project(D: np.ndarray) -> np.ndarray:
    """Scale every column to unit norm; a zero column becomes the first canonical basis vector."""
    D = np.array(D, dtype=float, ndmin=2)
    norms = np.linalg.norm(D, axis=0)
    zero = norms == 0
    out = D / np.where(zero, 1.0, norms)
    if np.any(zero):
        out[:, zero] = 0.0
        out[0, zero] = 1.0
    return out


def box_project(V: np.ndarray, lo, hi) -> np.ndarray:
    """Elementwise clamp onto [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise InvalidArgumentError("box bounds must satisfy lo <= hi everywhere")
    return np.minimum(np.maximum(np.asarray(V, dtype=float), lo), hi)


def hard_threshold_gap(out: np.ndarray, v: np.ndarray, lam: float, tau: float) -> float:
    """Total per-entry excess of λ·[w ≠ 0] + τ/2(w − v)² at `out` over the better of w = 0 and w = v."""
    out = np.asarray(out, dtype=float)
    v = np.asarray(v, dtype=float)
    value = lam * (out != 0) + 0.5 * tau * (out - v) ** 2
    best = np.minimum(lam * (v != 0), 0.5 * tau * v**2)
    return float(np.sum(np.maximum(value - best, 0.0)))


def sphere_optimality_residual(out: np.ndarray, v: np.ndarray) -> float:
    """How far `out` is from being a nearest unit-column point of v.

    Sums the column norm defects, the tangential part of v − out and any negative
    alignment between v and out.
    """
    out = np.array(out, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    norm_defect = np.abs(np.linalg.norm(out, axis=0) - 1.0)
    diff = v - out
    tangential = diff - out * np.sum(out * diff, axis=0)
    misaligned = np.maximum(-np.sum(out * v, axis=0), 0.0)
    return float(np.sum(norm_defect) + np.linalg.norm(tangential) + np.sum(misaligned))


def box_optimality_residual(out: np.ndarray, v: np.ndarray, lo, hi, tol=1e-12) -> float:
    """Distance of v − out from the normal cone of [lo, hi] at `out`, plus any bound violation."""
    out = np.asarray(out, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), out.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), out.shape)
    diff = np.asarray(v, dtype=float) - out
    outside = np.maximum(lo - out, 0.0) + np.maximum(out - hi, 0.0)
    # positive pull only allowed at the upper bound, negative only at the lower one
    pull_up = np.where(out >= hi - tol, 0.0, np.maximum(diff, 0.0))
    pull_down = np.where(out <= lo + tol, 0.0, np.maximum(-diff, 0.0))
    return float(np.linalg.norm(outside) + np.linalg.norm(pull_up + pull_down))


@dataclass(frozen=True)
class AdmmContext:
    """Scaled-form ADMM state of one dictionary subproblem.

    Z is the splitting variable living on the unit-column sphere, U the scaled dual.
    The Cholesky factor of WᵀW + (η + ρ)Id is computed once per outer iteration.
    """

    Z: np.ndarray
    U: np.ndarray
    rho: float
    factor: tuple
    D: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, D_anchor: np.ndarray, W: np.ndarray, eta: float, rho=None, Y=None) -> "AdmmContext":
        """Start from Z = D_anchor.

        Without data the dual starts at zero. With Y it starts at the radial part of
        −∇H(D_anchor)/ρ, the dual of the subproblem at its anchor, so the ADMM error
        shrinks with the outer step instead of restarting from a fixed offset.
        """
        m = D_anchor.shape[1]
        gram = W.T @ W
        if rho is None:
            rho = max(1.0, float(np.trace(gram)) / m)
        if not rho > 0:
            raise InvalidArgumentError(f"ADMM penalty must be positive, got {rho}")
        try:
            factor = cho_factor(gram + (eta + rho) * np.eye(m))
        except LinAlgError as error:
            raise NumericalFailureError(f"ADMM system could not be factorized: {error}") from error
        Z = np.array(D_anchor, dtype=float)
        if Y is None:
            U = np.zeros_like(Z)
        else:
            grad = (Z @ W.T - Y) @ W
            U = -Z * np.sum(Z * grad, axis=0) / rho
        return cls(Z=Z, U=U, rho=rho, factor=factor)

    def primal_residual(self) -> float:
        if self.D is None:
            return np.inf
        return float(np.linalg.norm(self.D - self.Z))


def admm_d_step(
    context: AdmmContext, D_cur: np.ndarray, W: np.ndarray, Y: np.ndarray,
    D_anchor: np.ndarray, eta: float,
) -> tuple[np.ndarray, AdmmContext]:
    """One scaled ADMM pass on min ½‖Y − DWᵀ‖² + η/2‖D − D_anchor‖² over unit-norm columns.

    Returns the feasible splitting variable Z as the candidate and the advanced context.
    """
    if D_cur.shape != context.Z.shape:
        raise InvalidArgumentError(f"D has shape {D_cur.shape}, context expects {context.Z.shape}")
    rho = context.rho
    rhs = Y @ W + eta * D_anchor + rho * (context.Z - context.U)
    D = cho_solve(context.factor, rhs.T).T
    if not np.all(np.isfinite(D)):
        raise NumericalFailureError("ADMM dictionary solve produced non-finite entries")
    Z = sphere_project(D + context.U)
    U = context.U + D - Z
    return Z, replace(context, Z=Z, U=U, D=D)


@dataclass(frozen=True)
class PithConfig:
    step_size: float
    inner_lipschitz: float


def pith_w_step(
    W_cur: np.ndarray, D: np.ndarray, Y: np.ndarray, W_anchor: np.ndarray,
    eta: float, lam: float, config: PithConfig,
) -> np.ndarray:
    """One iterative hard-thresholding pass on min λ‖W‖₀ + ½‖Y − DWᵀ‖² + η/2‖W − W_anchor‖²."""
    tau = config.step_size
    if not (tau > 0 and tau * (config.inner_lipschitz + eta) < 1):
        raise InvalidArgumentError(
            f"PITH step {tau} violates tau * (L + eta) < 1 with L={config.inner_lipschitz}, eta={eta}"
        )
    grad = (W_cur @ D.T - Y.T) @ D + eta * (W_cur - W_anchor)
    return hard_threshold(W_cur - tau * grad, lam, 1.0 / tau)


def illumination_propagate(
    I_cur: np.ndarray, R: np.ndarray, O: np.ndarray, I_anchor: np.ndarray, eta: float, radius: int
) -> np.ndarray:
    """Max-RGB illumination estimate: box filter of max(O, I) over a (2·radius + 1) window, clamped to [0, O]."""
    if radius < 0:
        raise InvalidArgumentError(f"radius must be non-negative, got {radius}")
    shapes = {np.shape(I_cur), np.shape(R), np.shape(O), np.shape(I_anchor)}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"illumination inputs disagree in shape: {sorted(shapes)}")
    smoothed = uniform_filter(np.maximum(O, I_cur), size=2 * radius + 1, mode="nearest")
    return box_project(smoothed, 0.0, O)


def grid_neighbours(I: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum and count of the 4-neighbours inside the grid, so that ∇ᵀ∇I = count·I − sum."""
    I = np.asarray(I, dtype=float)
    total = np.zeros_like(I)
    count = np.zeros_like(I)
    ones = np.ones_like(I)
    for src, dst in (
        ((slice(None), slice(1, None)), (slice(None), slice(None, -1))),
        ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        ((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
        ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
    ):
        total[dst] += I[src]
        count[dst] += ones[src]
    return total, count


def illumination_sweep(
    I_cur: np.ndarray, R: np.ndarray, O: np.ndarray, I_anchor: np.ndarray, eta: float, alpha: float
) -> np.ndarray:
    """One projected Jacobi sweep on min_{0 ≤ I ≤ O} α/2‖∇I‖² + ½‖O − I⊙R‖² + η/2‖I − I_anchor‖².

    Every pixel is set to its exact minimizer with the neighbours frozen; the sweep
    contracts in the max-norm by at most 4α/(4α + η).
    """
    if not alpha > 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    if not eta > 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    shapes = {np.shape(I_cur), np.shape(R), np.shape(O), np.shape(I_anchor)}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"illumination inputs disagree in shape: {sorted(shapes)}")
    total, count = grid_neighbours(I_cur)
    update = (alpha * total + O * R + eta * I_anchor) / (alpha * count + R * R + eta)
    return box_project(update, 0.0, O)


class ProxGradientOperator(EmbeddedOperator):
    """Proximal-gradient pass on the block subproblem f(u) + H(u, v) + η/2‖u − u^{t-1}‖²."""

    name = "prox-gradient"

    def __init__(self, problem: BlockProblem, block: Block):
        self.problem = problem
        self.block = block
        self.view = problem.view(block)
        self.step_size = None
        self.inner_lipschitz = None

    def reset(self, anchor, other, eta):
        self.inner_lipschitz = estimate_partial_lipschitz(self.problem, self.block, other)
        self.step_size = STEP_FRACTION / (self.inner_lipschitz + eta)

    def step(self, current, other, anchor, eta):
        tau = self.step_size
        grad = self.view.grad(current, other) + eta * (current - anchor)
        return self.view.prox(current - tau * grad, 1.0 / tau)


class PithOperator(ProxGradientOperator):
    """PITH on the code block of dictionary learning (x = W, y = D)."""

    name = "pith"

    def __init__(self, problem: BlockProblem, Y: np.ndarray, lam: float):
        super().__init__(problem, Block.X)
        self.Y = Y
        self.lam = lam

    def step(self, current, other, anchor, eta):
        config = PithConfig(step_size=self.step_size, inner_lipschitz=self.inner_lipschitz)
        return pith_w_step(current, other, self.Y, anchor, eta, self.lam, config)


class AdmmDictionaryOperator(EmbeddedOperator):
    """ADMM on the dictionary block of dictionary learning (x = W, y = D)."""

    name = "admm"

    def __init__(self, Y: np.ndarray, rho=None):
        self.Y = Y
        self.rho = rho
        self.context = None

    def reset(self, anchor, other, eta):
        self.context = AdmmContext.initial(anchor, other, eta, rho=self.rho, Y=self.Y)

    def step(self, current, other, anchor, eta):
        if self.context is None:
            self.reset(anchor, other, eta)
        candidate, self.context = admm_d_step(self.context, current, other, self.Y, anchor, eta)
        return candidate


class IlluminationOperator(EmbeddedOperator):
    """Illumination propagation for Retinex decomposition (x = I, y = R).

    The first `smoothing_steps` applications run the max-RGB smoothing estimator; the
    remaining propagations are projected Jacobi sweeps on the illumination subproblem,
    anchored at I^{t-1}.
    """

    name = "illumination"

    def __init__(self, O: np.ndarray, alpha: float, radius=2, smoothing_steps=1):
        if radius < 0:
            raise InvalidArgumentError(f"radius must be non-negative, got {radius}")
        if smoothing_steps < 0:
            raise InvalidArgumentError("smoothing_steps must be non-negative")
        if not alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
        self.O = O
        self.alpha = alpha
        self.radius = radius
        self.smoothing_steps = smoothing_steps
        self.applied = 0

    def reset(self, anchor, other, eta):
        self.applied = 0

    def step(self, current, other, anchor, eta):
        self.applied += 1
        if self.applied <= self.smoothing_steps:
            return illumination_propagate(current, other, self.O, anchor, eta, self.radius)
        return illumination_sweep(current, other, self.O, anchor, eta, self.alpha)
