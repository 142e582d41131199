"""Hypothesis tree construction and its flattening into a particle belief.

A pluggable generator proposes goal candidates (which objects matter and
where they belong) and, for every candidate object that is not visible,
a confidence-weighted set of closed areas it might be hiding in.  Every
root-to-leaf combination of those choices becomes one particle: the visible
scene plus hypothesized hidden objects materialized at their guessed areas,
paired with the candidate goal, weighted by the product of confidences on
the path.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Protocol

from .belief import ParticleBelief, make_belief
from .pomdp import Observation, PlacementGoal, State
from .scene import AreaKind, NodeId, SceneGraph

log = logging.getLogger(__name__)


class GeneratorError(RuntimeError):
    """The hypothesis generator failed (transport or unparseable output)."""


class EmptyResultError(GeneratorError):
    """The generator produced no usable candidates."""


@dataclass(frozen=True)
class GoalCandidate:
    """One hypothesized placement goal with the generator's confidence."""

    goal: PlacementGoal
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")


@dataclass(frozen=True)
class LocationCandidate:
    """One hypothesized current area for a hidden object."""

    area: NodeId
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")


@dataclass(frozen=True)
class QueryContext:
    """Everything a generator query may condition on.

    ``observation_text`` is regenerated from the observation on every call
    so the generator always sees the current scene.
    """

    instruction: str
    observation: Observation
    failed_goals: tuple[PlacementGoal, ...] = ()
    satisfied_objects: frozenset[NodeId] = frozenset()
    history_text: str | None = None

    def observation_text(self) -> str:
        return textualize(self.observation, self.failed_goals, self.satisfied_objects)


class HypothesisGenerator(Protocol):
    """Interface both the mock and the LLM-backed generator implement."""

    max_concurrency: int

    def propose_goals(
        self, ctx: QueryContext, max_candidates: int
    ) -> list[GoalCandidate]: ...

    def propose_locations(
        self, ctx: QueryContext, obj: NodeId, max_candidates: int
    ) -> list[LocationCandidate]: ...


@dataclass(frozen=True)
class HypothesisTree:
    """Validated goal candidates plus per-object location candidates."""

    goal_candidates: tuple[GoalCandidate, ...]
    locations: dict[NodeId, tuple[LocationCandidate, ...]]

    def path_count(self) -> int:
        """Number of root-to-leaf paths, i.e. particles before merging."""
        total = 0
        for cand in self.goal_candidates:
            n = 1
            for obj, options in self._hidden_options(cand):
                n *= len(options)
            total += n
        return total

    def shape(self) -> dict:
        return {
            "goal_candidates": len(self.goal_candidates),
            "location_candidates": {o: len(v) for o, v in sorted(self.locations.items())},
            "paths": self.path_count(),
        }

    def _hidden_options(
        self, cand: GoalCandidate
    ) -> list[tuple[NodeId, tuple[LocationCandidate, ...]]]:
        return [(o, self.locations[o]) for o in cand.goal.objects() if o in self.locations]

    def to_belief(self, z: Observation) -> ParticleBelief:
        """Flatten paths into a normalized particle belief anchored at ``z``."""
        weighted: list[tuple[State, float]] = []
        for cand in self.goal_candidates:
            hidden = self._hidden_options(cand)
            if any(not options for _, options in hidden):
                log.warning(
                    "dropping goal candidate %s: no location hypotheses for a hidden object",
                    cand.goal,
                )
                continue
            names = [o for o, _ in hidden]
            for combo in product(*(options for _, options in hidden)):
                graph = z.graph
                ok = True
                for obj, loc in zip(names, combo):
                    if obj in graph.objects:
                        ok = False
                        break
                    graph = _materialize(graph, obj, loc.area)
                if not ok:
                    continue
                weight = cand.confidence
                for loc in combo:
                    weight *= loc.confidence
                weighted.append((State(graph, cand.goal), weight))
        return make_belief(weighted, normalize=True)


def _materialize(g: SceneGraph, obj: NodeId, area: NodeId) -> SceneGraph:
    objects = dict(g.objects)
    objects[obj] = area
    return SceneGraph(
        areas=g.areas,
        objects=objects,
        robot_at=g.robot_at,
        held_object=g.held_object,
        held_from=g.held_from,
    )


# -- observation textualization -------------------------------------------


def textualize(
    z: Observation,
    failed_goals: tuple[PlacementGoal, ...] = (),
    satisfied_objects: frozenset[NodeId] | set[NodeId] = frozenset(),
) -> str:
    """Render an observation as the fixed-format text block generators consume.

    Sections appear in a fixed order: closed areas, open areas, observed
    objects with their areas, numbered wrong goal states, and objects already
    in target areas.  Areas keep their scene declaration order; objects are
    listed lexicographically.  The robot-hand pseudo-area is omitted from the
    area lists but appears as a location for a held object.
    """
    g = z.graph
    listed = [a for a in g.areas.values() if a.kind is not AreaKind.ROBOT_HAND]
    closed = [a.id for a in listed if not a.open]
    opened = [a.id for a in listed if a.open]
    objs = sorted(g.objects)

    def area_line(label: str, names: list[NodeId]) -> str:
        body = ", ".join(names)
        return f"{label}: {body}, " if body else f"{label}: "

    lines = [
        "Current Observation: ",
        area_line("The closed areas are", closed),
        area_line("The open areas are", opened),
        area_line(
            "The observed objects and their initial areas are",
            [f"{o} is in {g.objects[o]}" for o in objs],
        ),
        "",
        "The wrong goal states are: ",
    ]
    for i, goal in enumerate(failed_goals, start=1):
        lines.append(f"{i}. {goal}.")
    lines.append("")
    lines.append(area_line("Objects already in target areas", sorted(satisfied_objects)))
    return "\n".join(lines)


# -- validated generator queries -------------------------------------------


def query_goals(
    gen: HypothesisGenerator, ctx: QueryContext, max_candidates: int
) -> list[GoalCandidate]:
    """Ask for goal candidates and enforce the structural rules.

    A target must be an area named in the observation, and once a candidate
    maps an object to a target that mapping is locked: later candidates that
    disagree are dropped (not repaired), as are duplicates.
    """
    if max_candidates < 1:
        raise ValueError("max_candidates must be >= 1")
    raw = gen.propose_goals(ctx, max_candidates)
    known_areas = set(ctx.observation.graph.areas)
    locked: dict[NodeId, NodeId] = {}
    accepted: list[GoalCandidate] = []
    seen: set[PlacementGoal] = set()
    for cand in raw:
        if len(accepted) >= max_candidates:
            break
        goal = cand.goal
        if len(goal) == 0:
            log.warning("dropping empty goal candidate")
            continue
        if goal in seen:
            log.warning("dropping duplicate goal candidate %s", goal)
            continue
        bad_area = next((t for _, t in goal.pairs if t not in known_areas), None)
        if bad_area is not None:
            log.warning(
                "dropping goal candidate %s: target %r not in observation", goal, bad_area
            )
            continue
        conflict = next(
            ((o, t) for o, t in goal.pairs if locked.get(o, t) != t), None
        )
        if conflict is not None:
            log.warning(
                "dropping goal candidate %s: object %r already locked to %r",
                goal,
                conflict[0],
                locked[conflict[0]],
            )
            continue
        for o, t in goal.pairs:
            locked[o] = t
        seen.add(goal)
        accepted.append(cand)
    return accepted


def query_location(
    gen: HypothesisGenerator, ctx: QueryContext, obj: NodeId, max_candidates: int
) -> list[LocationCandidate]:
    """Location hypotheses for one object, normalized to sum to one.

    A visible object resolves to its observed area with confidence 1 without
    consulting the generator.  For hidden objects only closed areas of the
    current observation are admissible; confidences are renormalized
    defensively even when the generator claims they already sum to one.
    """
    g = ctx.observation.graph
    if obj in g.objects:
        return [LocationCandidate(g.objects[obj], 1.0)]
    raw = gen.propose_locations(ctx, obj, max_candidates)
    closed = {aid for aid, a in g.areas.items() if not a.open}
    picked: list[LocationCandidate] = []
    seen_areas: set[NodeId] = set()
    for cand in raw:
        if len(picked) >= max_candidates:
            break
        if cand.area not in closed:
            log.warning(
                "dropping location %r for %r: not a closed area of the observation",
                cand.area,
                obj,
            )
            continue
        if cand.area in seen_areas:
            continue
        seen_areas.add(cand.area)
        picked.append(cand)
    if not picked:
        raise EmptyResultError(f"no admissible location candidates for {obj!r}")
    total = sum(c.confidence for c in picked)
    return [LocationCandidate(c.area, c.confidence / total) for c in picked]


def build_hypothesis_tree(
    z: Observation,
    ctx: QueryContext,
    gen: HypothesisGenerator,
    max_goal_candidates: int,
    max_location_candidates: int,
) -> HypothesisTree:
    """Run the goal query and one location query per hidden candidate object.

    Location queries for distinct objects are independent; when the generator
    allows concurrency they run in a thread pool, and results are always
    combined in sorted object order so the tree does not depend on completion
    order.  An object whose location query yields nothing keeps an empty
    option list, which silently prunes the candidates that need it.
    """
    goal_cands = query_goals(gen, ctx, max_goal_candidates)
    hidden = sorted(
        {
            o
            for cand in goal_cands
            for o in cand.goal.objects()
            if o not in z.graph.objects
        }
    )

    def fetch(obj: NodeId) -> tuple[LocationCandidate, ...]:
        try:
            return tuple(query_location(gen, ctx, obj, max_location_candidates))
        except EmptyResultError:
            log.warning("no locations for hypothesized object %r; pruning its branches", obj)
            return ()

    workers = max(1, int(getattr(gen, "max_concurrency", 1)))
    locations: dict[NodeId, tuple[LocationCandidate, ...]] = {}
    if workers > 1 and len(hidden) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(hidden))) as pool:
            results = list(pool.map(fetch, hidden))
        locations = dict(zip(hidden, results))
    else:
        locations = {obj: fetch(obj) for obj in hidden}
    return HypothesisTree(goal_candidates=tuple(goal_cands), locations=locations)


def build_llm_belief(
    z: Observation,
    ctx: QueryContext,
    gen: HypothesisGenerator,
    max_goal_candidates: int,
    max_location_candidates: int,
) -> ParticleBelief:
    """Full pipeline: hypothesis tree -> normalized particle belief.

    An empty tree yields an empty belief; the caller decides the fallback.
    """
    tree = build_hypothesis_tree(
        z, ctx, gen, max_goal_candidates, max_location_candidates
    )
    return tree.to_belief(z)
