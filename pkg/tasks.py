"""Concrete two-block tasks: ℓ0 dictionary learning and Retinex low-light decomposition."""

import logging
from dataclasses import dataclass

import numpy as np

from embedded_solvers import (
    box_optimality_residual,
    box_project,
    hard_threshold,
    hard_threshold_gap,
    illumination_sweep,
    sphere_optimality_residual,
    sphere_project,
)
from errors import InvalidArgumentError
from problem import FEASIBILITY_TOL, BlockProblem

logger = logging.getLogger(__name__)

# floor of the illumination channel when rescaling colour images
ILLUMINATION_FLOOR = 1e-6
# exact illumination prox: sweeps until the largest change is below this share of max|I|
EXACT_SWEEP_TOL = 1e-12
EXACT_SWEEP_LIMIT = 5000


@dataclass(frozen=True)
class DlInstance:
    """Dictionary learning data: Y ≈ D Wᵀ with W (p×m) sparse codes and D (n×m) unit-norm atoms."""

    Y: np.ndarray
    lam: float
    m: int

    def __post_init__(self):
        if np.ndim(self.Y) != 2 or min(np.shape(self.Y)) < 1:
            raise InvalidArgumentError(f"Y must be a non-empty matrix, got shape {np.shape(self.Y)}")
        if self.m < 1:
            raise InvalidArgumentError(f"dictionary size must be at least 1, got {self.m}")
        if not self.lam > 0:
            raise InvalidArgumentError(f"lambda must be positive, got {self.lam}")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class LieInstance:
    """Low-light observation O ≈ I ⊙ R with smoothness weight α on the illumination I."""

    O: np.ndarray
    alpha: float

    def __post_init__(self):
        if np.ndim(self.O) != 2:
            raise InvalidArgumentError(
                f"observation must be a single-channel image, got shape {np.shape(self.O)}"
            )
        if np.any(self.O < 0) or np.any(self.O > 1) or not np.all(np.isfinite(self.O)):
            raise InvalidArgumentError("observation entries must lie in [0, 1]")
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class SynthSpec:
    n: int = 16
    m: int = 32
    p: int = 200
    sparsity: int = 3
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.m, self.p) < 1:
            raise InvalidArgumentError("dimensions n, m, p must be at least 1")
        if not 1 <= self.sparsity <= self.m:
            raise InvalidArgumentError(f"sparsity must lie in [1, m={self.m}], got {self.sparsity}")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")


def _unit_columns(D: np.ndarray) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(D, axis=0) - 1.0) <= FEASIBILITY_TOL))


def build_dl_problem(inst: DlInstance) -> BlockProblem:
    """ℓ0 dictionary learning with x = W (codes) and y = D (dictionary)."""
    Y, lam = inst.Y, inst.lam

    def residual(W, D):
        return D @ W.T - Y

    return BlockProblem(
        name="l0dl",
        x_shape=(inst.p, inst.m),
        y_shape=(inst.n, inst.m),
        f_value=lambda W: lam * float(np.count_nonzero(W)),
        g_value=lambda D: 0.0 if _unit_columns(D) else np.inf,
        h_value=lambda W, D: 0.5 * float(np.sum(residual(W, D) ** 2)),
        h_grad_x=lambda W, D: residual(W, D).T @ D,
        h_grad_y=lambda W, D: residual(W, D) @ W,
        prox_f=lambda V, tau: hard_threshold(V, lam, tau),
        prox_g=lambda V, tau: sphere_project(V),
        prox_residual_f=lambda out, V, tau: hard_threshold_gap(out, V, lam, tau),
        prox_residual_g=lambda out, V, tau: sphere_optimality_residual(out, V),
        gram_x=lambda D: D.T @ D,
        gram_y=lambda W: W.T @ W,
    )


def forward_differences(I: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical forward differences; the last column/row is zero (Neumann boundary)."""
    gx = np.zeros_like(I, dtype=float)
    gy = np.zeros_like(I, dtype=float)
    gx[:, :-1] = I[:, 1:] - I[:, :-1]
    gy[:-1, :] = I[1:, :] - I[:-1, :]
    return gx, gy


def forward_differences_adjoint(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Adjoint of `forward_differences`."""
    px = np.array(gx, dtype=float)
    py = np.array(gy, dtype=float)
    px[:, -1] = 0.0
    py[-1, :] = 0.0
    out = -px - py
    out[:, 1:] += px[:, :-1]
    out[1:, :] += py[:-1, :]
    return out


def smoothness_laplacian(I: np.ndarray) -> np.ndarray:
    """∇ᵀ∇I, the gradient of ½‖∇I‖²."""
    return forward_differences_adjoint(*forward_differences(I))


def solve_illumination(O: np.ndarray, R: np.ndarray, I_anchor: np.ndarray, zeta: float, alpha: float) -> np.ndarray:
    """Minimizer of the illumination subproblem with proximal weight ζ, by projected Jacobi sweeps from I_anchor."""
    I = box_project(I_anchor, 0.0, O)
    for _ in range(EXACT_SWEEP_LIMIT):
        following = illumination_sweep(I, R, O, I_anchor, zeta, alpha)
        change = float(np.max(np.abs(following - I))) if following.size else 0.0
        I = following
        if change <= EXACT_SWEEP_TOL * (1.0 + float(np.max(np.abs(I), initial=0.0))):
            return I
    logger.warning(f"illumination prox stopped after {EXACT_SWEEP_LIMIT} sweeps, last change {change:.3e}")
    return I


def build_lie_problem(inst: LieInstance) -> BlockProblem:
    """Retinex decomposition with x = I (illumination in [0, O]) and y = R (reflectance in [0, 1])."""
    O, alpha = np.asarray(inst.O, dtype=float), inst.alpha

    def h_value(I, R):
        gx, gy = forward_differences(I)
        return 0.5 * alpha * float(np.sum(gx**2) + np.sum(gy**2)) + 0.5 * float(np.sum((O - I * R) ** 2))

    def in_box(u, hi):
        return bool(np.all(u >= -FEASIBILITY_TOL) and np.all(u <= hi + FEASIBILITY_TOL))

    def reflectance_prox(R_t, I, zeta):
        return box_project((O * I + zeta * R_t) / (I * I + zeta), 0.0, 1.0)

    def illumination_prox(I_t, R, zeta):
        return solve_illumination(O, R, I_t, zeta, alpha)

    return BlockProblem(
        name="lie",
        x_shape=O.shape,
        y_shape=O.shape,
        f_value=lambda I: 0.0 if in_box(I, O) else np.inf,
        g_value=lambda R: 0.0 if in_box(R, 1.0) else np.inf,
        h_value=h_value,
        h_grad_x=lambda I, R: alpha * smoothness_laplacian(I) + (I * R - O) * R,
        h_grad_y=lambda I, R: (I * R - O) * I,
        prox_f=lambda V, tau: box_project(V, 0.0, O),
        prox_g=lambda V, tau: box_project(V, 0.0, 1.0),
        prox_residual_f=lambda out, V, tau: box_optimality_residual(out, V, 0.0, O),
        prox_residual_g=lambda out, V, tau: box_optimality_residual(out, V, 0.0, 1.0),
        exact_prox_x=illumination_prox,
        exact_prox_y=reflectance_prox,
        # 4α per difference direction
        lipschitz_bound_x=lambda R: 8.0 * alpha + float(np.max(R * R)),
        lipschitz_bound_y=lambda I: float(np.max(I * I)),
    )


def synth_dl_data(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic dictionary learning data (Y, D_true, W_true), deterministic under `spec.seed`."""
    rng = np.random.default_rng(spec.seed)
    D_true = sphere_project(rng.standard_normal((spec.n, spec.m)))
    W_true = np.zeros((spec.p, spec.m))
    for row in W_true:
        support = rng.choice(spec.m, size=spec.sparsity, replace=False)
        row[support] = rng.standard_normal(spec.sparsity)
    Y = D_true @ W_true.T
    if spec.noise_sigma > 0:
        Y = Y + spec.noise_sigma * rng.standard_normal(Y.shape)
    logger.debug(f"synthesized dictionary learning data n={spec.n} m={spec.m} p={spec.p} seed={spec.seed}")
    return Y, D_true, W_true


def dl_initial_point(inst: DlInstance, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """(W⁰, D⁰) = (0, sphere_project(Gaussian))."""
    rng = np.random.default_rng(seed)
    return np.zeros((inst.p, inst.m)), sphere_project(rng.standard_normal((inst.n, inst.m)))


def lie_initial_point(inst: LieInstance) -> tuple[np.ndarray, np.ndarray]:
    """(I⁰, R⁰) = (O, 0.5)."""
    O = np.asarray(inst.O, dtype=float)
    return O.copy(), np.full_like(O, 0.5)


def synth_lie_image(size=32, seed=0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dark synthetic observation (O, I_true, R_true) with O = I_true ⊙ R_true.

    The illumination is a smooth vignette with a tilted ramp, the reflectance a
    piecewise-constant texture of 4×4 patches.
    """
    if size < 2:
        raise InvalidArgumentError(f"image size must be at least 2, got {size}")
    rng = np.random.default_rng(seed)
    coords = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(coords, coords)
    cx, cy = rng.uniform(-0.5, 0.5, size=2)
    vignette = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2))
    I_true = 0.05 + 0.25 * vignette + 0.05 * (xx + 1.0)
    patches = rng.uniform(0.3, 1.0, size=(-(-size // 4), -(-size // 4)))
    R_true = np.kron(patches, np.ones((4, 4)))[:size, :size]
    return I_true * R_true, I_true, R_true


def to_luminance(image: np.ndarray) -> np.ndarray:
    """Max channel of a colour image; single-channel images pass through."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image
    if image.ndim == 3:
        return image.max(axis=2)
    raise InvalidArgumentError(f"expected a 2-D or 3-D image, got shape {image.shape}")


def enhance_rgb(image: np.ndarray, I: np.ndarray, R: np.ndarray, gamma=0.45) -> np.ndarray:
    """Recombine R with gamma-corrected illumination and rescale the colour channels by the value ratio."""
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    value = to_luminance(image)
    enhanced = np.clip(R * np.power(I, gamma), 0.0, 1.0)
    if np.ndim(image) == 2:
        return enhanced
    ratio = enhanced / np.maximum(value, ILLUMINATION_FLOOR)
    return np.clip(np.asarray(image, dtype=float) * ratio[..., None], 0.0, 1.0)
