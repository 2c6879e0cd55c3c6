"""Primitive-action APIs.

The six verbs — navigate, grasp, place, explore_global, explore_local,
report_observation — are the only way a plan can touch the world. Each call
returns a Feedback value: a success flag, an optional typed fault, an optional
observation, and a one-line message rendered into the planner dialogue.

Verb names, argument arities and fault strings are frozen: they appear
verbatim in the system prompt and in the plan DSL grammar.

Execution verbs (navigate/grasp/place) count toward step-wise accounting;
perception verbs never do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import ApiCallError, Fault
from .perception import (
    ApiCallErrorSignal,
    Belief,
    NotAtReceptacleError,
    Observation,
    TargetNotVisibleSignal,
    explore_global,
    explore_local,
    report_observation,
)
from .world import ActionRequest, EXECUTION_VERBS, World

__all__ = ["ActionRequest", "Feedback", "SkillContext", "dispatch", "is_execution_verb"]


def is_execution_verb(verb: str) -> bool:
    return verb in EXECUTION_VERBS


@dataclass
class Feedback:
    """Structured result of one primitive API invocation."""

    request_index: int
    verb: str
    success: bool
    fault: Optional[Fault] = None
    observation: Optional[Observation] = None
    message: str = ""
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def counted(self) -> bool:
        return is_execution_verb(self.verb)

    def render(self) -> str:
        """One line for the planner dialogue."""
        status = "ok" if self.success else "FAILED"
        line = f"[{self.request_index}] {self.verb} -> {status}: {self.message}"
        if self.fault is not None:
            line += f" ({self.fault.kind})"
        return line


@dataclass
class SkillContext:
    """Per-trial execution context: the world, the belief, and hooks the
    harness uses for tracing and step accounting."""

    world: World
    belief: Belief
    on_feedback: Optional[Callable[[ActionRequest, Feedback], None]] = None
    requests_made: int = 0
    execution_steps: int = 0
    successful_steps: int = 0

    def take_index(self) -> int:
        idx = self.requests_made
        self.requests_made += 1
        return idx


def _feedback(ctx: SkillContext, request: ActionRequest, **kw: Any) -> Feedback:
    fb = Feedback(request_index=request.request_index, verb=request.verb, **kw)
    if fb.counted:
        ctx.execution_steps += 1
        if fb.success:
            ctx.successful_steps += 1
    if ctx.on_feedback is not None:
        ctx.on_feedback(request, fb)
    return fb


def _api_error(ctx: SkillContext, request: ActionRequest, code: str, message: str) -> Feedback:
    return _feedback(
        ctx,
        request,
        success=False,
        fault=ApiCallError(code, message),
        message=message,
    )


# --- the six verbs --------------------------------------------------------------


def navigate(ctx: SkillContext, request: ActionRequest) -> Feedback:
    ref = request.target
    if ref is None or request.params.get("string_literal"):
        return _api_error(
            ctx, request, "bad_argument",
            f"navigate expects an object reference from the global map, got a string literal {ref!r}",
        )
    gmap = ctx.belief.global_map
    if gmap is None or gmap.find(ref) is None:
        return _api_error(
            ctx, request, "unknown_reference",
            f"navigate target {ref!r} is not in the global object map; run explore_global first",
        )
    outcome = ctx.world.apply_action(request)
    if outcome.success:
        ctx.belief.at_receptacle = ref
        ctx.belief.approach_side = outcome.details.get("approach_side")
    return _feedback(
        ctx,
        request,
        success=outcome.success,
        fault=outcome.fault,
        message=outcome.message,
        details=outcome.details,
    )


def grasp(ctx: SkillContext, request: ActionRequest) -> Feedback:
    ref = request.target
    if ref is None or request.params.get("string_literal"):
        return _api_error(
            ctx, request, "bad_argument",
            f"grasp expects an object reference from a local map, got a string literal {ref!r}",
        )
    if ctx.belief.global_map is not None and ctx.belief.global_map.find(ref) is not None:
        return _api_error(ctx, request, "bad_argument", f"{ref!r} is furniture and cannot be grasped")
    # normal flow: the target entered the belief through a local scan; a
    # dropped object noted on the floor stays referencable for re-grasping
    known = ref in ctx.belief.objects or any(m.find(ref) for m in ctx.belief.local_maps.values())
    if not known:
        return _feedback(
            ctx,
            request,
            success=False,
            fault=ApiCallError("target_not_in_local_map", f"{ref!r} is not in any current local map"),
            message=f"grasp failed: {ref} not in local map",
        )
    outcome = ctx.world.apply_action(request)
    details = dict(outcome.details)
    if outcome.success:
        ctx.belief.note_grasped(ref)
    elif details.get("shifted"):
        root = _believed_root(ctx.belief, ref)
        if root is not None:
            ctx.belief.mark_stale(root)
    return _feedback(
        ctx,
        request,
        success=outcome.success,
        fault=outcome.fault,
        message=outcome.message,
        details=details,
    )


def place(ctx: SkillContext, request: ActionRequest) -> Feedback:
    if request.location is None:
        ref = request.target
        if ref is None or request.params.get("string_literal"):
            return _api_error(
                ctx, request, "bad_argument",
                f"place expects a receptacle reference or a location, got a string literal {ref!r}",
            )
        known = (
            (ctx.belief.global_map is not None and ctx.belief.global_map.find(ref) is not None)
            or ref in ctx.belief.objects
        )
        if not known:
            return _api_error(
                ctx, request, "unknown_reference",
                f"place target {ref!r} is not in any map",
            )
    held = ctx.world.gripper
    outcome = ctx.world.apply_action(request)
    if outcome.success and held is not None:
        rid = outcome.details.get("on", request.target)
        ctx.belief.note_placed(held, rid, ctx.world.position_of(held))
    elif outcome.details.get("dropped"):
        # failed place drops the held object on the floor near the robot
        ctx.belief.holding = None
        dropped = outcome.details["dropped"]
        b = ctx.belief.objects.get(dropped)
        if b is not None:
            b.parent_id = None
            b.location = ctx.world.position_of(dropped)
    return _feedback(
        ctx,
        request,
        success=outcome.success,
        fault=outcome.fault,
        message=outcome.message,
        details=outcome.details,
    )


def do_explore_global(ctx: SkillContext, request: ActionRequest) -> Feedback:
    gmap = explore_global(ctx.world, ctx.belief)
    names = ", ".join(f.id for f in gmap.furniture) or "nothing"
    coverage = int(gmap.explored_mask.sum())
    return _feedback(
        ctx,
        request,
        success=True,
        message=f"global map built: {names} ({coverage} cells explored)",
        details={"furniture": [f.to_json() for f in gmap.furniture]},
    )


def do_explore_local(ctx: SkillContext, request: ActionRequest) -> Feedback:
    ref = request.target
    if ref is None or request.params.get("string_literal"):
        return _api_error(
            ctx, request, "bad_argument",
            f"explore_local expects a furniture reference, got a string literal {ref!r}",
        )
    gmap = ctx.belief.global_map
    if gmap is None or gmap.find(ref) is None:
        return _api_error(
            ctx, request, "unknown_reference",
            f"explore_local target {ref!r} is not in the global object map",
        )
    try:
        lmap = explore_local(ctx.world, ctx.belief, ref)
    except NotAtReceptacleError as exc:
        return _feedback(ctx, request, success=False, fault=exc.fault(), message=str(exc))
    listing = ", ".join(f"{o.id} ({o.category})" for o in lmap.items) or "no objects"
    obs = Observation(
        kind="stay", target=ref, visible=tuple(lmap.items), captured_at_step=ctx.world.step_counter
    )
    return _feedback(
        ctx,
        request,
        success=True,
        observation=obs,
        message=f"local map of {ref}: {listing}",
        details={"receptacle_version": lmap.built_version, "scan_count": lmap.scan_count},
    )


def do_report_observation(ctx: SkillContext, request: ActionRequest) -> Feedback:
    ref = request.target
    if ref in ("stay", "rest"):
        obs = report_observation(ctx.world, ctx.belief, ref)
        listing = ", ".join(o.id for o in obs.visible) or "nothing in view"
        return _feedback(ctx, request, success=True, observation=obs, message=f"{ref} view: {listing}")
    if ref is None:
        return _api_error(ctx, request, "bad_argument", "report_observation needs a target or a mode")
    target_obj = None
    for m in ctx.belief.local_maps.values():
        target_obj = m.find(ref)
        if target_obj is not None:
            break
    if target_obj is None and ctx.belief.global_map is not None:
        target_obj = ctx.belief.global_map.find(ref)
    if target_obj is None:
        return _api_error(
            ctx, request, "unknown_reference",
            f"report_observation target {ref!r} is not in any current map",
        )
    try:
        obs = report_observation(ctx.world, ctx.belief, target_obj)
    except TargetNotVisibleSignal as exc:
        return _feedback(ctx, request, success=False, fault=exc.fault(), message=str(exc))
    except ApiCallErrorSignal as exc:
        return _feedback(ctx, request, success=False, fault=exc.fault(), message=exc.message)
    seen = obs.find(ref)
    desc = f"{seen.category} with attributes {sorted(seen.attributes)}" if seen else "nothing"
    return _feedback(ctx, request, success=True, observation=obs, message=f"close-up of {ref}: {desc}")


_HANDLERS = {
    "navigate": navigate,
    "grasp": grasp,
    "place": place,
    "explore_global": do_explore_global,
    "explore_local": do_explore_local,
    "report_observation": do_report_observation,
}


def dispatch(ctx: SkillContext, request: ActionRequest) -> Feedback:
    """Single entry point for every plan step. Assigns the request index,
    routes to the verb handler, and feeds the accounting hooks."""
    if request.request_index < 0:
        request.request_index = ctx.take_index()
    handler = _HANDLERS.get(request.verb)
    if handler is None:
        return _feedback(
            ctx,
            request,
            success=False,
            fault=ApiCallError(
                "unknown_verb",
                f"unknown verb {request.verb!r}; available: {', '.join(sorted(_HANDLERS))}",
            ),
            message=f"unknown verb {request.verb!r}",
        )
    return handler(ctx, request)


def _believed_root(belief: Belief, oid: str) -> Optional[str]:
    b = belief.objects.get(oid)
    if b is None:
        return None
    current = b.parent_id
    seen = set()
    while current is not None and current in belief.objects and current not in seen:
        seen.add(current)
        parent = belief.objects[current].parent_id
        if parent is None:
            return current
        current = parent
    return current
