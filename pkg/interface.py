"""File containing interface abstract classes."""

from abc import ABC, abstractmethod

import numpy as np


class EmbeddedOperator(ABC):
    """One propagation step of a task-embedded block update.

    The operator keeps a per-subproblem context (e.g. ADMM multipliers) that the
    solver resets at the start of every outer iteration. A context is owned by a
    single solve and never shared.
    """

    name = "operator"

    @abstractmethod
    def reset(self, anchor: np.ndarray, other: np.ndarray, eta: float):
        """Initialize the context for the subproblem anchored at `anchor` with the other block frozen."""

    @abstractmethod
    def step(
        self, current: np.ndarray, other: np.ndarray, anchor: np.ndarray, eta: float
    ) -> np.ndarray:
        """Apply the operator once and return the next block iterate."""


class SolverCallbacks(ABC):
    """An abstract class to provide an interface for callbacks from the solver to a client."""

    @abstractmethod
    def on_start(self, problem_name: str, label: str):
        pass

    @abstractmethod
    def on_block_update(self, iteration: int, block, outcome):
        pass

    @abstractmethod
    def on_iteration(self, record):
        pass

    @abstractmethod
    def on_fallback(self, iteration: int, block, message: str):
        pass

    @abstractmethod
    def on_stop(self, result):
        pass
