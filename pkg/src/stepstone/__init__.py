"""Desk-scale teacher-student curriculum RL simulator.

A teacher policy proposes synthetic tasks, students train on them with
leave-one-out policy gradients, and the teacher is rewarded by measured
student improvement on a held-out pool of hard tasks.
"""

from stepstone.errors import ConfigurationError, ContractViolation, ResampleBudgetError

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "ResampleBudgetError",
]

__version__ = "0.1.0"
