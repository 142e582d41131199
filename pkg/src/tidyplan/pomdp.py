"""POMDP model over scene graphs: states, actions, transition, observation, reward.

All functions here are pure; uncertainty lives entirely in the belief, not
in the dynamics.  Transitions are deterministic and observations are the
noise-free visible projection of the next state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .scene import NodeId, SceneGraph, move_cost


class ActionKind(IntEnum):
    # Numeric order defines the canonical action ordering.
    OPEN = 0
    PICK = 1
    PLACE = 2
    NULL = 3


@dataclass(frozen=True, order=False)
class Action:
    """Parameterized robot action.

    ``Open(area)`` opens a closed area, ``Pick(area, object)`` takes an
    object from an open area into the hand, ``Place(area)`` puts the held
    object into an open area, ``Null`` does nothing.  Each non-Null action
    implicitly navigates to its area first.
    """

    kind: ActionKind
    area: NodeId | None = None
    obj: NodeId | None = None

    @staticmethod
    def open_(area: NodeId) -> Action:
        return Action(ActionKind.OPEN, area=area)

    @staticmethod
    def pick(area: NodeId, obj: NodeId) -> Action:
        return Action(ActionKind.PICK, area=area, obj=obj)

    @staticmethod
    def place(area: NodeId) -> Action:
        return Action(ActionKind.PLACE, area=area)

    @staticmethod
    def null() -> Action:
        return Action(ActionKind.NULL)

    def sort_key(self) -> tuple:
        """Canonical ordering: Open < Pick < Place < Null, then by parameters."""
        return (self.kind.value, self.area or "", self.obj or "")

    def __str__(self) -> str:
        if self.kind is ActionKind.OPEN:
            return f"Open({self.area})"
        if self.kind is ActionKind.PICK:
            return f"Pick({self.area}, {self.obj})"
        if self.kind is ActionKind.PLACE:
            return f"Place({self.area})"
        return "Null"


@dataclass(frozen=True, eq=False)
class PlacementGoal:
    """An ordered set of (object, target area) pairs.

    Pair order is preserved for display and policy iteration, but equality
    and hashing are order-insensitive so that the same goal generated twice
    in different pair orders is recognized as one goal.
    """

    pairs: tuple[tuple[NodeId, NodeId], ...]
    _canon: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        objs = [o for o, _ in self.pairs]
        if len(set(objs)) != len(objs):
            raise ValueError(f"goal lists an object twice: {objs}")

    def canonical(self) -> tuple:
        c = self._canon
        if c is None:
            c = tuple(sorted(self.pairs))
            object.__setattr__(self, "_canon", c)
        return c

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PlacementGoal):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __len__(self) -> int:
        return len(self.pairs)

    def objects(self) -> tuple[NodeId, ...]:
        return tuple(o for o, _ in self.pairs)

    def canonical_text(self) -> str:
        return "; ".join(f"{o} -> {t}" for o, t in self.canonical())

    def __str__(self) -> str:
        return ", ".join(f"{o} in {t}" for o, t in self.pairs)


@dataclass(frozen=True)
class State:
    """One belief particle's world hypothesis: a full scene graph plus a goal."""

    graph: SceneGraph
    goal: PlacementGoal

    def key(self) -> tuple:
        return (self.graph.key(), self.goal.canonical())

    def sort_key(self) -> tuple:
        return (self.goal.canonical(), self.graph.key())


@dataclass(frozen=True)
class Observation:
    """The visible projection of a scene graph; always satisfies graph == visible(graph)."""

    graph: SceneGraph

    def __post_init__(self) -> None:
        if self.graph.visible() is not self.graph and self.graph.visible() != self.graph:
            raise ValueError("observation graph contains hidden objects")

    def key(self) -> tuple:
        return self.graph.key()


@dataclass(frozen=True)
class RewardConfig:
    """Reward model constants, all in abstract reward units (non-negative)."""

    manipulation_cost: float = 5.0
    nav_scale: float = 2.0
    nav_max: float = 27.0
    infeasible_cost: float = 100.0
    subgoal_reward: float = 200.0
    completion_reward: float = 200.0

    def __post_init__(self) -> None:
        for name in (
            "manipulation_cost",
            "nav_scale",
            "nav_max",
            "infeasible_cost",
            "subgoal_reward",
            "completion_reward",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


# `model-default` is the base reward model; `experiment` is the benchmark
# variant (no subgoal reward, completion 1000, infeasible 25).
REWARD_PRESETS: dict[str, RewardConfig] = {
    "model-default": RewardConfig(
        manipulation_cost=5.0,
        infeasible_cost=100.0,
        subgoal_reward=200.0,
        completion_reward=200.0,
    ),
    "experiment": RewardConfig(
        manipulation_cost=5.0,
        infeasible_cost=25.0,
        subgoal_reward=0.0,
        completion_reward=1000.0,
    ),
}


def reward_preset(name: str) -> RewardConfig:
    try:
        return REWARD_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown reward preset {name!r}; expected one of {sorted(REWARD_PRESETS)}"
        ) from None


@dataclass(frozen=True)
class StepResult:
    """Outcome of one transition; infeasibility is data, not an exception."""

    next_state: State
    reward: float
    feasible: bool
    executed_move_cost: float


def is_feasible(s: State, a: Action) -> bool:
    """Feasibility predicate mirroring the action preconditions."""
    g = s.graph
    if a.kind is ActionKind.NULL:
        return True
    if a.kind is ActionKind.OPEN:
        return g.has_area(a.area) and not g.areas[a.area].open
    if a.kind is ActionKind.PICK:
        return (
            g.has_area(a.area)
            and g.areas[a.area].open
            and g.held_object is None
            and g.objects.get(a.obj) == a.area
        )
    if a.kind is ActionKind.PLACE:
        return g.has_area(a.area) and g.areas[a.area].open and g.held_object is not None
    raise ValueError(f"unknown action kind {a.kind!r}")


def satisfied_pairs(g: SceneGraph, p: PlacementGoal) -> frozenset[tuple[NodeId, NodeId]]:
    """The subset of goal pairs currently satisfied in ``g``."""
    return frozenset((o, t) for o, t in p.pairs if g.objects.get(o) == t)


def goal_satisfied(g: SceneGraph, p: PlacementGoal) -> bool:
    """True iff every goal pair holds; objects absent from ``g`` count as unsatisfied."""
    return all(g.objects.get(o) == t for o, t in p.pairs)


def transition(s: State, a: Action, cfg: RewardConfig) -> StepResult:
    """Deterministic transition with reward.

    Infeasible actions behave as Null and cost ``infeasible_cost``.  A
    feasible action first navigates to its area (charging the move cost),
    then applies its single graph mutation and the fixed manipulation cost.
    Subgoal and completion rewards are granted for pairs newly satisfied by
    this step, judged against the state's own hypothesized goal.
    """
    if a.kind is ActionKind.NULL:
        return StepResult(s, 0.0, True, 0.0)
    if not is_feasible(s, a):
        return StepResult(s, -cfg.infeasible_cost, False, 0.0)
    g = s.graph
    mc = float(move_cost(g, g.robot_at, a.area, cfg))
    g2 = g.with_robot_at(a.area)
    if a.kind is ActionKind.OPEN:
        g2 = g2.with_area_open(a.area)
    elif a.kind is ActionKind.PICK:
        g2 = g2.with_object_moved(a.obj, g2.hand_id)
    else:  # PLACE
        g2 = g2.with_object_moved(g2.held_object, a.area)
    before = satisfied_pairs(g, s.goal)
    after = satisfied_pairs(g2, s.goal)
    newly = len(after - before)
    n_pairs = len(s.goal.pairs)
    completed = (
        n_pairs > 0 and len(after) == n_pairs and len(before) != n_pairs
    )
    reward = -(mc + cfg.manipulation_cost)
    reward += cfg.subgoal_reward * newly
    if completed:
        reward += cfg.completion_reward
    return StepResult(State(g2, s.goal), reward, True, mc)


def observe(s: State) -> Observation:
    """The one observation this state emits (probability mass 1)."""
    return Observation(s.graph.visible())


def observation_likelihood(s_next: State, z: Observation) -> float:
    """1.0 if ``z`` matches the visible projection of ``s_next``, else 0.0."""
    return 1.0 if s_next.graph.visible() == z.graph else 0.0
