"""Utilities file, these are functions that are supposed to be very low-level, not requiring either a problem or a solver object."""

from math import floor, inf

import numpy as np

from errors import NumericalFailureError

# guard for the relative-change denominators of the stopping rule
DENOMINATOR_GUARD = 1e-12


def frobenius(u: np.ndarray) -> float:
    """Frobenius norm of a tensor of any rank."""
    return float(np.sqrt(np.sum(np.square(u))))


def distance(a: np.ndarray | None, b: np.ndarray | None) -> float:
    """Frobenius distance, +inf when either side is missing."""
    if a is None or b is None:
        return inf
    return frobenius(a - b)


def relative_change(new, old) -> float:
    """Relative change ‖new − old‖ / max(‖old‖, guard) for tensors and scalars alike."""
    if np.isscalar(new):
        return abs(float(new) - float(old)) / max(abs(float(old)), DENOMINATOR_GUARD)
    return frobenius(new - old) / max(frobenius(old), DENOMINATOR_GUARD)


def power_iteration(matrix: np.ndarray, tol=1e-4, max_iter=500, seed=0) -> float:
    """Largest eigenvalue of a symmetric positive semi-definite matrix.

    Stops once the Rayleigh estimate changes by less than `tol` relative to itself.

    Raises:
        NumericalFailureError: if the estimate has not settled after `max_iter` iterations.
    """
    matrix = np.atleast_2d(matrix)
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(matrix.shape[1])
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(max_iter):
        image = matrix @ vector
        image_norm = float(np.linalg.norm(image))
        if image_norm == 0.0:
            return 0.0
        vector = image / image_norm
        if abs(image_norm - estimate) <= tol * image_norm:
            return image_norm
        estimate = image_norm
    raise NumericalFailureError(
        f"power iteration did not reach relative tolerance {tol} within {max_iter} iterations"
    )


def past_time_formatter(seconds: float) -> str:
    """Human readable duration for console reports."""
    whole_minutes = floor(seconds / 60)
    remaining_seconds = seconds - 60 * whole_minutes
    txt = ""
    if whole_minutes > 0:
        txt += f"{whole_minutes} minute{'s' if whole_minutes > 1 else ''} "
    txt += f"{remaining_seconds:.2f} seconds"
    return txt
