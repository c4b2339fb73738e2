"""
UniEdit. Licensed under the GNU GPL-3.0.
See <https://www.gnu.org/licenses/gpl-3.0.html> for details.
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, TypeVar

from .utilities import override

if TYPE_CHECKING:
    from pathlib import Path
    from .uev_loop import LoopState
    from .utilities import JSON_TYPE

T = TypeVar("T")


class Middleware(ABC):
    """Hooks into the rounds and steps of an edit loop."""

    @abstractmethod
    def before_round(self, state: LoopState) -> None:
        """Called once the round's plan is built, before integration starts."""

    @abstractmethod
    def after_step(self, state: LoopState) -> None:
        """Called after the verifier has scored a step (step 0 included)."""

    @abstractmethod
    def after_round(self, state: LoopState) -> None:
        """Called when the round's trajectory and feedback are available."""


class EventLogMiddleware(Middleware):
    """
    Structured run log: one JSON object per line.

    Records carry no timestamps, so identical runs produce identical logs.
    Without a path the events are only kept in memory.
    """

    def __init__(self, path: Path | None = None, enabled: bool = True) -> None:
        self.path = path
        self.enabled = enabled
        self.events: list[dict[str, JSON_TYPE]] = []
        self.logger = logging.getLogger(__name__)

        if self.enabled and self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def emit(self, event: dict[str, JSON_TYPE]) -> None:
        if not self.enabled:
            return
        self.events.append(event)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")

    @override
    def before_round(self, state: LoopState) -> None:
        self.emit({
            "event": "round_start",
            "round": state.round,
            "instruction": state.instruction,
            "caption_src": " ".join(state.plan.caption_src),
            "caption_tar": " ".join(state.plan.caption_tar),
            "patch": state.plan.patch.to_json(),
        })

    @override
    def after_step(self, state: LoopState) -> None:
        record = state.last_record
        if record is None:
            return
        verifier = state.verifier
        self.emit({
            "event": "step",
            "round": state.round,
            "k": record.k,
            "score": record.score,
            "best_score": verifier.state.best_score,
            "best_step": verifier.state.best_step,
            "decision": verifier.decisions[-1].value if verifier.decisions else None,
        })

    @override
    def after_round(self, state: LoopState) -> None:
        trajectory = state.trajectory
        feedback = state.feedback
        self.emit({
            "event": "round_end",
            "round": state.round,
            "stop_reason": trajectory.halt_reason if trajectory is not None else None,
            "num_steps": trajectory.num_steps if trajectory is not None else None,
            "best_score": state.verifier.state.best_score,
            "best_step": state.verifier.state.best_step,
            "worst_feedback": feedback.worst.to_json() if feedback is not None and feedback.entries else None,
            "corrective_instruction": state.corrective,
        })


class RunMiddleware:
    """Registry of run middleware, one instance per type."""

    def __init__(self, *args: Middleware) -> None:
        self._middleware: dict[type, Middleware] = {}
        for middleware in args:
            self.register(middleware)

    def register(self, middleware: Middleware) -> None:
        self._middleware[type(middleware)] = middleware

    def get(self, middleware_type: type[T]) -> T | None:
        middleware = self._middleware.get(middleware_type)
        if isinstance(middleware, middleware_type):
            return middleware
        return None

    def before_round(self, state: LoopState) -> None:
        for middleware in self._middleware.values():
            middleware.before_round(state)

    def after_step(self, state: LoopState) -> None:
        for middleware in self._middleware.values():
            middleware.after_step(state)

    def after_round(self, state: LoopState) -> None:
        for middleware in self._middleware.values():
            middleware.after_round(state)
