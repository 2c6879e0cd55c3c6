"""Trial runner and suite harness.

The closed loop per trial: ask the planner for the next step given the full
dialogue history and belief; execute it through the skills boundary; verify
success from before/after observations plus the feedback flag; on failure,
classify the cause and either run the hierarchical recovery machinery or hand
the diagnostic back to the planner. The loop ends on done(), goal
satisfaction, exhausted recovery, or the step cap.

Accounting model: every failed execution event produces one failure record.
A record is *replanned* when a recovery re-issue (or a plan-level correction)
followed it, and *recovered* when that re-issue succeeded; a record with no
re-issue is a *direct failure*. Failure-cause labels that need ground truth
(was that a missed detection?) are assigned by the harness, which — unlike
the planner — is allowed to peek at the world, exactly like an experimenter
annotating trial videos.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Optional

from .errors import PLAN_LEVEL_CODES, BudgetExceeded, ConfigError, TransportError
from .goals import Goal, goal_satisfied, ground_view, parse_goal
from .perception import Belief, LocalMap, capture
from .planning import (
    Call,
    ChatModelPlanner,
    DialogueHistory,
    Done,
    HttpChatBackend,
    ParseError,
    Planner,
    PlannerView,
    ScriptedPlanner,
    to_request,
)
from .recovery import DEFAULT_BUDGETS, EpisodeRunner, RecoveryEpisode
from .skills import ActionRequest, Feedback, SkillContext, dispatch
from .trace import (
    OUTCOME_FAILURE,
    OUTCOME_INVALID,
    OUTCOME_SUCCESS,
    TrialReport,
    write_trace_file,
)
from .metrics import MetricsTable, compute_metrics
from .verification import (
    FailureRecord,
    SuccessVerdict,
    atom_object_selector,
    belief_goal_satisfied,
    classify_failure,
    first_unsatisfied_atom,
    verify_feasibility,
    verify_success,
)
from .world import NoiseModel, World, WorldConfig, load_config_file, parse_config, validate_config, vary_config

DEFAULT_STEP_CAP = 100

NOISE_PROFILES: dict[str, dict[str, float]] = {
    "zero": {name: 0.0 for name in NoiseModel.PROB_FIELDS},
    "default": {},  # NoiseModel defaults
    "realistic": {},  # alias for the defaults
}


@dataclass
class TaskSpec:
    id: str
    name: str
    instruction: str
    scene: WorldConfig
    goal: Goal
    trial_count: int
    seeds: list[int] = field(default_factory=list)
    placement_style: Optional[str] = None
    step_cap: int = DEFAULT_STEP_CAP

    def __post_init__(self) -> None:
        if self.trial_count <= 0:
            raise ConfigError(f"task.{self.id}.trials", "trial_count must be > 0")
        if not self.seeds:
            self.seeds = list(range(self.trial_count))

    def seed_for(self, trial_index: int, base: int = 0) -> int:
        return self.seeds[trial_index % len(self.seeds)] + base * 100003


@dataclass
class TrialOptions:
    noise: Optional[dict[str, float]] = None  # probability overrides
    recovery_enabled: bool = True
    planner_driven_recovery: bool = False
    strict_escalation: bool = False
    budgets: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    step_cap: Optional[int] = None
    request_cap_factor: int = 10


def resolve_noise_profile(profile: "str | dict[str, float] | None") -> dict[str, float]:
    if profile is None:
        return {}
    if isinstance(profile, str):
        if profile not in NOISE_PROFILES:
            raise ConfigError("noise_profile", f"unknown profile {profile!r}; known: {sorted(NOISE_PROFILES)}")
        return dict(NOISE_PROFILES[profile])
    return dict(profile)


# --- trial execution -------------------------------------------------------------


class _Trial:
    """Mutable state for one closed-loop run."""

    def __init__(self, task: TaskSpec, planner: Planner, seed: int, trial_index: int, options: TrialOptions):
        self.task = task
        self.planner = planner
        self.seed = seed
        self.trial_index = trial_index
        self.options = options

        config = vary_config(task.scene, seed)
        noise_kwargs = {name: getattr(config.noise, name) for name in NoiseModel.PROB_FIELDS}
        noise_kwargs.update(options.noise or {})
        config = _with_noise(config, NoiseModel(rng_seed=seed, **noise_kwargs))
        self.world = World(config)
        self.belief = Belief()
        self.events: list[dict[str, Any]] = []
        self.records: list[FailureRecord] = []
        self._finding_keys: set[str] = set()
        self.ctx = SkillContext(self.world, self.belief, on_feedback=self._trace_feedback)
        self.history = DialogueHistory(task.instruction)
        self.pending_plan_fix: Optional[FailureRecord] = None
        self.pending_diagnostic: Optional[str] = None
        self.runner = EpisodeRunner(
            ctx=self.ctx,
            feasibility=lambda: verify_feasibility(task.goal, self.belief),
            trace=self.events.append,
            record_sink=self.records.append,
            goal_check=lambda: goal_believed_done(task.goal, self.belief),
            verdict_trace=self._trace_verdict,
        )

    # -- tracing hooks ---------------------------------------------------------

    def _trace_feedback(self, request: ActionRequest, fb: Feedback) -> None:
        self.events.append(
            {
                "event": "request",
                "index": request.request_index,
                "verb": request.verb,
                "target": request.target,
                "location": (
                    [request.location[0], list(request.location[1])] if request.location else None
                ),
                "side": request.side,
                "source": request.params.get("recovery_level", "planner"),
            }
        )
        self.events.append(
            {
                "event": "feedback",
                "index": fb.request_index,
                "verb": fb.verb,
                "success": fb.success,
                "counted": fb.counted,
                "fault": (
                    {"kind": fb.fault.kind, "code": fb.fault.code, "message": fb.fault.message}
                    if fb.fault
                    else None
                ),
                "message": fb.message,
                "details": _jsonable(fb.details),
            }
        )
        if fb.observation is not None:
            self.events.append(
                {"event": "observation", "index": fb.request_index, "phase": "result",
                 "observation": fb.observation.to_json()}
            )

    def _trace_verdict(self, request, fb, verdict, before, after) -> None:
        self.events.append(
            {
                "event": "verdict",
                "index": fb.request_index,
                "verb": request.verb,
                "target": request.target,
                "location": (
                    [request.location[0], list(request.location[1])] if request.location else None
                ),
                "placed": fb.details.get("placed"),
                "dropped": fb.details.get("dropped"),
                "success": verdict.success,
                "feedback_flag": verdict.feedback_flag,
                "delta_consistent": verdict.delta_consistent,
                "suspected_cause": verdict.suspected_cause,
                "explanation": verdict.explanation,
                "feedback_success": fb.success,
                "fault": (
                    {"kind": fb.fault.kind, "code": fb.fault.code, "message": fb.fault.message}
                    if fb.fault
                    else None
                ),
                "before": before.to_json(),
                "after": after.to_json(),
            }
        )

    # -- execution with verification ------------------------------------------------

    def _execute(self, request: ActionRequest) -> tuple[Feedback, "SuccessVerdict", Any]:
        prior_map = None
        if request.verb == "explore_local" and request.target in self.belief.local_maps:
            m = self.belief.local_maps[request.target]
            prior_map = LocalMap(
                receptacle_id=m.receptacle_id,
                items=list(m.items),
                built_at_step=m.built_at_step,
                built_version=m.built_version,
                stale=m.stale,
                scan_count=m.scan_count,
            )
        before = capture(self.world, "stay")
        fb = dispatch(self.ctx, request)
        after = capture(self.world, "stay")
        verdict = verify_success(before, after, fb, request)
        self._trace_verdict(request, fb, verdict, before, after)
        self._perception_findings(request, fb, prior_map)
        return fb, verdict, before

    def _perception_findings(self, request: ActionRequest, fb: Feedback, prior_map) -> None:
        """Ground-truth-assisted accounting for perception failures: a rescan
        of an unchanged receptacle that reveals a new real object proves a
        missed detection; a vanished or unmasked phantom proves a false
        positive. Both count as locally replanned and recovered."""
        if request.verb == "explore_local" and fb.success and prior_map is not None:
            new_map = self.belief.local_maps.get(request.target or "")
            if new_map is not None and new_map.built_version == prior_map.built_version:
                prior_ids = {o.id for o in prior_map.items}
                new_ids = {o.id for o in new_map.items}
                for oid in sorted(new_ids - prior_ids):
                    if oid in self.world.objects and f"md:{oid}" not in self._finding_keys:
                        self._finding_keys.add(f"md:{oid}")
                        self.records.append(
                            FailureRecord(
                                "missed_detection", fb.request_index, "local",
                                replanned=True, recovered=True,
                                detail=f"{oid} appeared on re-scan of {request.target}",
                            )
                        )
                for pid in sorted(prior_ids - new_ids):
                    if pid in self.world.phantoms and f"fp:{pid}" not in self._finding_keys:
                        self._finding_keys.add(f"fp:{pid}")
                        self.records.append(
                            FailureRecord(
                                "false_positive", fb.request_index, "local",
                                replanned=True, recovered=True,
                                detail=f"phantom {pid} vanished on re-scan",
                            )
                        )
        if (
            request.verb == "report_observation"
            and fb.success
            and fb.observation is not None
            and fb.observation.kind == "close_up"
        ):
            target = request.target or ""
            if target in self.world.phantoms and f"fp:{target}" not in self._finding_keys:
                revealed = fb.observation.find(target)
                believed = self.world.phantoms[target].believed_category
                if revealed is not None and revealed.category != believed:
                    self._finding_keys.add(f"fp:{target}")
                    self.records.append(
                        FailureRecord(
                            "false_positive", fb.request_index, "object",
                            replanned=True, recovered=True,
                            detail=f"{target} unmasked as {revealed.category} by close-up",
                        )
                    )

    # -- the loop ---------------------------------------------------------------------

    def run(self) -> TrialReport:
        task = self.task
        options = self.options
        step_cap = options.step_cap or task.step_cap
        request_cap = step_cap * options.request_cap_factor
        outcome = OUTCOME_FAILURE
        reason = "unset"

        while True:
            if self.ctx.execution_steps >= step_cap:
                reason = "step cap"
                break
            if self.ctx.requests_made >= request_cap:
                reason = "request cap"
                break
            verdict_f = None
            if self.belief.global_map is not None:
                verdict_f = verify_feasibility(task.goal, self.belief)
                self.events.append({"event": "feasibility", **verdict_f.to_json()})
            view = PlannerView(
                belief=self.belief,
                feasibility=verdict_f,
                execution_steps=self.ctx.execution_steps,
                pending_diagnostic=self.pending_diagnostic,
            )
            try:
                step = self.planner.next_step(task, self.history, view)
            except TransportError as exc:
                outcome, reason = OUTCOME_INVALID, f"transport: {exc}"
                break
            except (BudgetExceeded, ParseError) as exc:
                self.records.append(
                    FailureRecord(
                        "api_call_error", self.ctx.requests_made, "none",
                        direct_failure=True, detail=str(exc),
                    )
                )
                outcome, reason = OUTCOME_FAILURE, f"plan rejected: {exc}"
                break
            repairs = getattr(self.planner, "last_repairs", 0)
            for _ in range(repairs):
                self.records.append(
                    FailureRecord(
                        "api_call_error", self.ctx.requests_made, "none",
                        replanned=True, recovered=True, detail="plan repaired after parse diagnostic",
                    )
                )
            self.events.append({"event": "plan", "text": step.render(), "repairs": repairs})
            self.history.append_plan(step.render())
            self.pending_diagnostic = None

            if isinstance(step, Done):
                satisfied = goal_satisfied(self.world, task.goal)
                if satisfied:
                    outcome, reason = OUTCOME_SUCCESS, step.message or "done"
                else:
                    outcome, reason = OUTCOME_FAILURE, step.message or "done without goal"
                    self._record_unsatisfiable_df(step.message)
                break

            assert isinstance(step, Call)
            if step.warning:
                self.history.append_note(step.warning)
            request = to_request(step)
            held_before = self.belief.holding
            fb, verdict, before = self._execute(request)
            self.history.append_feedback(fb.render())
            if fb.observation is not None and fb.verb != "explore_global":
                self.history.append_observation(_compact_observation(fb))

            if self.pending_plan_fix is not None:
                fix = self.pending_plan_fix
                self.pending_plan_fix = None
                fix.replanned = True
                if fix.cause == "api_call_error":
                    # recovered when the follow-up call is well-formed, even if
                    # its physical outcome is a fresh sampled failure
                    fix.recovered = _not_plan_fault(fb)
                else:
                    fix.recovered = fb.success and verdict.success

            if fb.success and verdict.success:
                continue

            record = classify_failure(verdict, fb, None)
            self.records.append(record)
            self.events.append({"event": "failure", **record.to_json()})

            if record.cause == "api_call_error":
                # plan-level mistake: the diagnostic goes back to the planner
                self.pending_plan_fix = record
                self.pending_diagnostic = fb.fault.message if fb.fault else fb.message
                continue
            if not options.recovery_enabled:
                record.mark_direct()
                outcome, reason = OUTCOME_FAILURE, f"unrecovered {record.cause} (recovery disabled)"
                break
            if options.planner_driven_recovery:
                self.pending_plan_fix = record
                self.pending_diagnostic = f"{record.cause}: {record.detail}"
                continue

            episode = RecoveryEpisode(
                failure=record,
                verb=request.verb,
                object_id=_episode_object(request, fb, held_before),
                target=request.target,
                location=request.location,
                budgets=dict(options.budgets),
                last_before=before,
                strict_escalation=options.strict_escalation,
            )
            self.runner.run(episode)
            self.events.append(
                {
                    "event": "episode_end",
                    "status": episode.status,
                    "attempts": dict(episode.attempts),
                    "levels": [d.level for d in episode.directives],
                }
            )
            if episode.status == "exhausted":
                outcome, reason = OUTCOME_FAILURE, f"recovery exhausted after {record.cause}"
                break

        satisfied = goal_satisfied(self.world, task.goal)
        if outcome != OUTCOME_INVALID:
            # outcome mirrors ground truth exactly: a trial that reached the
            # goal is a success even if the loop ended for another reason
            if satisfied and outcome == OUTCOME_FAILURE:
                outcome, reason = OUTCOME_SUCCESS, f"goal satisfied ({reason})"
            elif not satisfied and outcome == OUTCOME_SUCCESS:
                outcome = OUTCOME_FAILURE

        if self.pending_plan_fix is not None:
            fix = self.pending_plan_fix
            if outcome == OUTCOME_SUCCESS:
                fix.replanned, fix.recovered = True, True
            else:
                fix.mark_direct()
            self.pending_plan_fix = None

        report = TrialReport(
            task_id=task.id,
            trial_index=self.trial_index,
            seed=self.seed,
            outcome=outcome,
            reason=reason,
            goal_satisfied=satisfied,
            execution_steps=self.ctx.execution_steps,
            successful_steps=self.ctx.successful_steps,
            failure_records=self.records,
            events=self.events,
        )
        report.check_identities()
        return report

    def _record_unsatisfiable_df(self, message: str) -> None:
        """A done() that gives up on an infeasible goal: when ground truth does
        hold a matching object the belief must have missed it."""
        if not message.startswith("infeasible"):
            return
        atom = first_unsatisfied_atom(self.task.goal, self.belief)
        if atom is None:
            return
        sel = atom_object_selector(atom)
        if sel is None:
            return
        view = ground_view(self.world)
        if view.select(sel):
            self.records.append(
                FailureRecord(
                    "missed_detection", self.ctx.requests_made, "none",
                    direct_failure=True,
                    detail=f"gave up although ground truth holds {sel.describe()}",
                )
            )


def goal_believed_done(goal: Goal, belief: Belief) -> bool:
    return belief_goal_satisfied(goal, belief)


def _not_plan_fault(fb: Feedback) -> bool:
    return fb.fault is None or fb.fault.code not in PLAN_LEVEL_CODES


def _episode_object(request: ActionRequest, fb: Feedback, held_before: Optional[str]) -> Optional[str]:
    if request.verb == "grasp":
        return request.target
    if request.verb == "place":
        return fb.details.get("placed") or fb.details.get("dropped") or held_before
    return None


def _with_noise(config: WorldConfig, noise: NoiseModel) -> WorldConfig:
    return WorldConfig(
        name=config.name,
        room=config.room,
        furniture=config.furniture,
        objects=config.objects,
        robot_start=config.robot_start,
        noise=noise,
        grid_resolution=config.grid_resolution,
        arm_reach=config.arm_reach,
        sensing_radius=config.sensing_radius,
        view_radius=config.view_radius,
        closeup_radius=config.closeup_radius,
        variation=config.variation,
    )


def _jsonable(doc: dict[str, Any]) -> dict[str, Any]:
    return json.loads(json.dumps(doc, default=str))


def _compact_observation(fb: Feedback) -> str:
    obs = fb.observation
    assert obs is not None
    parts = [
        f"{o.id}({o.category}{';' + ','.join(sorted(o.attributes)) if o.attributes else ''})"
        for o in obs.visible
    ]
    return f"{obs.kind}: " + (", ".join(parts) or "nothing")


def run_trial(
    task: TaskSpec,
    planner: Planner,
    seed: int,
    trial_index: int = 0,
    options: Optional[TrialOptions] = None,
) -> TrialReport:
    """Run one closed-loop trial to completion and return its report."""
    return _Trial(task, planner, seed, trial_index, options or TrialOptions()).run()


# --- suites ---------------------------------------------------------------------------


@dataclass
class SuiteConfig:
    name: str
    tasks: list[TaskSpec]
    noise_profile: "str | dict[str, float]" = "default"
    planner: str = "scripted"
    parallel: int = 1

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ConfigError("suite.tasks", "no tasks")


def _resolve_scene(ref: str, base_dir: Optional[str]) -> WorldConfig:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        payload = resources.files("homeloop").joinpath(f"data/scenes/{name}.json").read_text("utf-8")
        raw = json.loads(payload)
        config = parse_config(raw)
        validate_config(config)
        return config
    path = ref if os.path.isabs(ref) or base_dir is None else os.path.join(base_dir, ref)
    return load_config_file(path)


def parse_suite(raw: dict, base_dir: Optional[str] = None) -> SuiteConfig:
    tasks = []
    for i, t in enumerate(raw.get("tasks", [])):
        path = f"tasks[{i}]"
        for key in ("id", "instruction", "scene", "goal"):
            if key not in t:
                raise ConfigError(f"{path}.{key}", "missing required field")
        tasks.append(
            TaskSpec(
                id=str(t["id"]),
                name=str(t.get("name", t["id"])),
                instruction=str(t["instruction"]),
                scene=_resolve_scene(str(t["scene"]), base_dir),
                goal=parse_goal(t["goal"], f"{path}.goal"),
                trial_count=int(t.get("trials", 5)),
                seeds=[int(s) for s in t.get("seeds", [])],
                placement_style=t.get("placement_style"),
                step_cap=int(t.get("step_cap", DEFAULT_STEP_CAP)),
            )
        )
    return SuiteConfig(
        name=str(raw.get("name", "suite")),
        tasks=tasks,
        noise_profile=raw.get("noise_profile", "default"),
        planner=str(raw.get("planner", "scripted")),
        parallel=int(raw.get("parallel", 1)),
    )


def load_suite_file(path: str) -> SuiteConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_suite(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def load_builtin_suite(name: str) -> SuiteConfig:
    payload = resources.files("homeloop").joinpath(f"data/suites/{name}.json").read_text("utf-8")
    return parse_suite(json.loads(payload), base_dir=None)


PlannerFactory = Callable[[], Planner]


def make_planner_factory(
    kind: str,
    llm_url: Optional[str] = None,
    llm_model: str = "gpt-4o",
    timeout: float = 30.0,
) -> PlannerFactory:
    if kind == "scripted":
        return ScriptedPlanner
    if kind == "llm":
        if not llm_url:
            raise ConfigError("planner", "llm planner requires --llm-url")

        def factory() -> Planner:
            return ChatModelPlanner(HttpChatBackend(base_url=llm_url, model=llm_model, timeout=timeout))

        return factory
    raise ConfigError("planner", f"unknown planner {kind!r}")


def run_suite(
    suite: SuiteConfig,
    planner_factory: PlannerFactory,
    out_dir: Optional[str] = None,
    options: Optional[TrialOptions] = None,
    base_seed: int = 0,
    parallel: Optional[int] = None,
) -> tuple[MetricsTable, list[TrialReport]]:
    """Run every task's trials (optionally across worker threads, one World
    per trial), write per-trial traces and the aggregate report."""
    options = options or TrialOptions()
    if options.noise is None:
        options = dataclasses.replace(options, noise=resolve_noise_profile(suite.noise_profile))
    jobs = []
    for task in suite.tasks:
        for trial_index in range(task.trial_count):
            jobs.append((task, trial_index, task.seed_for(trial_index, base_seed)))

    workers = parallel if parallel is not None else suite.parallel

    def run_one(job):
        task, trial_index, seed = job
        return run_trial(task, planner_factory(), seed, trial_index, options)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, jobs))
    else:
        reports = [run_one(job) for job in jobs]

    if out_dir is not None:
        for report in reports:
            task_dir = os.path.join(out_dir, report.task_id)
            os.makedirs(task_dir, exist_ok=True)
            write_trace_file(report, os.path.join(task_dir, f"{report.trial_index}.jsonl"))
    table = compute_metrics(reports)
    if out_dir is not None:
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(table.render_text() + "\n")
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(table.render_json() + "\n")
        _write_sidecar_meta(out_dir, suite)
    return table, reports


def _write_sidecar_meta(out_dir: str, suite: SuiteConfig) -> None:
    """Wall-clock metadata lives here and only here, keeping traces and
    reports byte-reproducible."""
    import datetime

    meta = {
        "suite": suite.name,
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


# --- replay -----------------------------------------------------------------------------


def replay_verdicts(report: TrialReport) -> list[tuple[dict, SuccessVerdict]]:
    """Re-derive every recorded verdict from its traced evidence. Returns
    (recorded_event, rederived_verdict) pairs; determinism means they agree."""
    from .errors import ApiCallError, Fault, NotAtReceptacle, PreconditionFault, TargetNotVisible
    from .trace import observation_from_json

    fault_types = {
        "ApiCallError": ApiCallError,
        "NotAtReceptacle": NotAtReceptacle,
        "PreconditionFault": PreconditionFault,
        "TargetNotVisible": TargetNotVisible,
        "Fault": Fault,
    }
    out = []
    for event in report.events:
        if event.get("event") != "verdict":
            continue
        fault = None
        if event.get("fault"):
            cls = fault_types.get(event["fault"]["kind"], Fault)
            fault = cls(event["fault"]["code"], event["fault"]["message"])
        details = {}
        if event.get("placed"):
            details["placed"] = event["placed"]
        if event.get("dropped"):
            details["dropped"] = event["dropped"]
        fb = Feedback(
            request_index=event["index"],
            verb=event["verb"],
            success=event["feedback_success"],
            fault=fault,
            message="",
            details=details,
        )
        location = None
        if event.get("location"):
            location = (event["location"][0], tuple(event["location"][1]))
        request = ActionRequest(verb=event["verb"], target=event.get("target"), location=location)
        verdict = verify_success(
            observation_from_json(event["before"]),
            observation_from_json(event["after"]),
            fb,
            request,
        )
        out.append((event, verdict))
    return out


def replay_matches(report: TrialReport) -> bool:
    for event, verdict in replay_verdicts(report):
        if (
            event["success"] != verdict.success
            or event["feedback_flag"] != verdict.feedback_flag
            or event["delta_consistent"] != verdict.delta_consistent
            or event.get("suspected_cause") != verdict.suspected_cause
        ):
            return False
    return True
