"""Planner-facing view of one loop iteration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

from ..perception import Belief
from ..verification import FeasibilityVerdict
from .dsl import PlanStep


@dataclass
class PlannerView:
    """Everything a planner may look at when emitting the next step: the
    belief maps, the latest feasibility verdict, and loop progress. Planners
    never touch the world."""

    belief: Belief
    feasibility: Optional[FeasibilityVerdict] = None
    execution_steps: int = 0
    pending_diagnostic: Optional[str] = None  # last plan-level fault text


class Planner(Protocol):
    def next_step(self, task, history, view: PlannerView) -> PlanStep:  # pragma: no cover - protocol
        ...
