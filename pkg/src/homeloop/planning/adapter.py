"""External chat-model planner.

Speaks the common chat-completions JSON shape: a role-tagged message list in,
a choice list out. The credential comes from the COME_LLM_API_KEY environment
variable. Replies are parsed through the plan DSL; a reply that fails the
static checks triggers an automatic repair round-trip with the rendered error
appended, up to a configurable cap.

A transcript backend replays canned replies from a JSON fixture for offline
tests and deterministic demos.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Protocol

import requests

from ..errors import BudgetExceeded, TransportError
from .base import PlannerView
from .dsl import Call, Done, ParseError, PlanStep, Ref, parse_plan
from .prompts import DialogueHistory, PromptTemplate, assemble_prompt, default_template

API_KEY_ENV = "COME_LLM_API_KEY"


class ChatBackend(Protocol):
    def complete(self, messages: list[dict[str, str]]) -> str:  # pragma: no cover - protocol
        ...


@dataclass
class HttpChatBackend:
    """Minimal chat-completions client over HTTP."""

    base_url: str
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 30.0
    api_key: Optional[str] = None

    def __post_init__(self) -> None:
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise TransportError(f"missing credential: set {API_KEY_ENV}")

    def complete(self, messages: list[dict[str, str]]) -> str:
        url = self.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        try:
            resp = requests.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"chat endpoint returned HTTP {resp.status_code}")
        try:
            doc = resp.json()
            return doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat completion body: {exc}") from exc


@dataclass
class TranscriptBackend:
    """Replays recorded replies in order; used for offline fixtures."""

    replies: list[str]
    requests_seen: list[list[dict[str, str]]] = field(default_factory=list)
    cursor: int = 0

    @staticmethod
    def from_file(path: str) -> "TranscriptBackend":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return TranscriptBackend(replies=list(doc["replies"]))

    def complete(self, messages: list[dict[str, str]]) -> str:
        self.requests_seen.append([dict(m) for m in messages])
        if self.cursor >= len(self.replies):
            raise TransportError("transcript exhausted")
        reply = self.replies[self.cursor]
        self.cursor += 1
        return reply


class ChatModelPlanner:
    """Planner that asks a chat model for the next sub-plan.

    Multi-step replies are accepted: the first step executes now, the rest is
    queued but re-validated against fresh maps before each use — stale steps
    force a fresh completion.
    """

    def __init__(
        self,
        backend: ChatBackend,
        template: Optional[PromptTemplate] = None,
        token_budget: int = 8000,
        max_repair_rounds: int = 2,
    ) -> None:
        self.backend = backend
        self.template = template or default_template()
        self.token_budget = token_budget
        self.max_repair_rounds = max_repair_rounds
        self.pending: list[PlanStep] = []
        self.last_repairs = 0

    def next_step(self, task, history: DialogueHistory, view: PlannerView) -> PlanStep:
        self.last_repairs = 0
        if self.pending:
            step = self.pending.pop(0)
            if self._still_valid(step, view):
                return step
            self.pending.clear()

        messages = assemble_prompt(self.template, history, view, self.token_budget)
        last_error: Optional[ParseError] = None
        for _ in range(self.max_repair_rounds + 1):
            text = self.backend.complete(messages)
            try:
                steps = parse_plan(text, gripper_occupied=view.belief.holding is not None)
            except ParseError as exc:
                last_error = exc
                self.last_repairs += 1
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user", "content": exc.render()},
                ]
                continue
            self.pending = steps[1:]
            return steps[0]
        self.last_repairs -= 1  # the final failed round is not a repair, it is the give-up
        raise BudgetExceeded(
            f"plan still malformed after {self.max_repair_rounds} repair round(s): {last_error}"
        )

    def _still_valid(self, step: PlanStep, view: PlannerView) -> bool:
        if isinstance(step, Done):
            return True
        if not isinstance(step, Call):
            return False
        arg = step.arg
        if step.verb == "navigate" and isinstance(arg, Ref):
            gmap = view.belief.global_map
            return gmap is not None and gmap.find(arg.name) is not None
        if step.verb in ("grasp", "report_observation") and isinstance(arg, Ref):
            return arg.name in view.belief.objects or any(
                m.find(arg.name) for m in view.belief.local_maps.values()
            )
        if step.verb == "place" and isinstance(arg, Ref):
            known_global = view.belief.global_map is not None and view.belief.global_map.find(arg.name)
            return bool(known_global) or arg.name in view.belief.objects
        return True
