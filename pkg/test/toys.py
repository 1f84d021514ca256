"""Small problems and operators with known solutions, shared by the tests."""

import numpy as np

from interface import EmbeddedOperator
from problem import Block, BlockProblem


def quadratic_problem(a, beta=0.5, kappa=1.0) -> BlockProblem:
    """f = g = 0, H = ½‖x − a‖² + κ/2‖y‖² + β/2‖x − y‖², with exact proximal solvers registered."""
    a = np.asarray(a, dtype=float)

    def h_value(x, y):
        return 0.5 * float(np.sum((x - a) ** 2)) + 0.5 * kappa * float(np.sum(y**2)) + 0.5 * beta * float(np.sum((x - y) ** 2))

    return BlockProblem(
        name="quadratic",
        x_shape=a.shape,
        y_shape=a.shape,
        f_value=lambda x: 0.0,
        g_value=lambda y: 0.0,
        h_value=h_value,
        h_grad_x=lambda x, y: (x - a) + beta * (x - y),
        h_grad_y=lambda x, y: kappa * y + beta * (y - x),
        prox_f=lambda v, tau: np.array(v, dtype=float),
        prox_g=lambda v, tau: np.array(v, dtype=float),
        exact_prox_x=lambda x_t, y, zeta: (a + beta * y + zeta * x_t) / (1 + beta + zeta),
        exact_prox_y=lambda y_t, x, zeta: (beta * x + zeta * y_t) / (kappa + beta + zeta),
        lipschitz_bound_x=lambda y: 1 + beta,
        lipschitz_bound_y=lambda x: kappa + beta,
    )


class ExactOperator(EmbeddedOperator):
    """Solves the η-proximal block subproblem in one step."""

    name = "exact"

    def __init__(self, problem: BlockProblem, block: Block):
        self.view = problem.view(block)

    def reset(self, anchor, other, eta):
        pass

    def step(self, current, other, anchor, eta):
        return self.view.exact_prox(anchor, other, eta)


class StalledOperator(EmbeddedOperator):
    """Never moves away from the anchor."""

    name = "stalled"

    def __init__(self):
        self.resets = 0

    def reset(self, anchor, other, eta):
        self.resets += 1

    def step(self, current, other, anchor, eta):
        return np.array(anchor, dtype=float)
