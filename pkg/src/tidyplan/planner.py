"""Online belief-tree search over sampled scenarios.

The planner determinizes the current belief into a fixed set of weighted
scenarios, then grows a sparse tree of action and observation branches.
Leaves are scored with a lower bound from simulating the hand-off rollout
policy and an admissible optimistic upper bound; bounds are backed up with
Bellman's principle, and each trial descends along the most promising
action (highest upper bound) into the observation child with the largest
weighted bound gap.  The search is anytime: it stops on convergence, on
action dominance, on a trial cap, or on the wall-clock budget, and returns
the root action with the best lower bound.

Scenarios that share a state are aggregated and simulated once; with
deterministic dynamics their futures are identical, so this is purely an
optimization.  Inside the tree a scenario whose hypothesized goal is
satisfied is absorbing: every action behaves as a free no-op for it.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

from .belief import EmptyBeliefError, ParticleBelief
from .pomdp import (
    Action,
    ActionKind,
    RewardConfig,
    State,
    goal_satisfied,
    transition,
)
from .scene import AreaKind


@dataclass(frozen=True)
class PlannerConfig:
    num_scenarios: int = 30
    max_depth: int = 20
    rollout_depth: int = 10
    discount: float = 1.0
    time_budget_s: float = 5.0
    seed: int = 0
    max_trials: int = 64
    gap_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.num_scenarios < 1 or self.max_depth < 1 or self.rollout_depth < 0:
            raise ValueError("num_scenarios, max_depth must be >= 1; rollout_depth >= 0")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")


@dataclass(frozen=True)
class Scenario:
    """One sampled root particle, fixed for the whole search."""

    particle_index: int
    weight: float


@dataclass(frozen=True)
class PlanStats:
    action: str
    trials: int
    expansions: int
    node_count: int
    root_lower: float
    root_upper: float
    wall_time_s: float
    scenario_count: int
    root_unique_states: int

    def as_dict(self) -> dict:
        return {
            "action": self.action,
            "trials": self.trials,
            "expansions": self.expansions,
            "node_count": self.node_count,
            "root_lower": self.root_lower,
            "root_upper": self.root_upper,
            "wall_time_s": self.wall_time_s,
            "scenario_count": self.scenario_count,
            "root_unique_states": self.root_unique_states,
        }


def sample_scenarios(b: ParticleBelief, k: int, seed: int) -> list[Scenario]:
    """Systematic (low-variance) sampling of ``k`` scenarios from the belief.

    A single uniform offset determines all picks, so any particle with
    weight at least 1/k is guaranteed a scenario, and the draw is
    reproducible from the seed and the belief alone.
    """
    b.check_normalized()
    u = random.Random(f"scenarios:{seed}").random()
    total = b.total_weight()
    out: list[Scenario] = []
    cum = 0.0
    idx = 0
    particles = b.particles
    for i in range(k):
        threshold = (i + u) / k * total
        while idx < len(particles) - 1 and cum + particles[idx].weight < threshold:
            cum += particles[idx].weight
            idx += 1
        out.append(Scenario(particle_index=idx, weight=1.0 / k))
    return out


# -- dynamic action space ---------------------------------------------------


def dynamic_actions_for_states(states: list[State]) -> list[Action]:
    """Grounded action set for a collection of hypothesized states.

    Union over states of: Open for every closed area, Pick for every goal
    object that is visible in an open area of a state with an empty hand,
    and Place into every open area whenever some state holds an object;
    plus Null.  The robot-hand pseudo-area is never a parameter.
    """
    opens: set[str] = set()
    picks: set[tuple[str, str]] = set()
    places: set[str] = set()
    any_held = False
    for s in states:
        g = s.graph
        for a in g.areas.values():
            if a.kind is AreaKind.ROBOT_HAND:
                continue
            if a.open:
                places.add(a.id)
            else:
                opens.add(a.id)
        if g.held_object is not None:
            any_held = True
        else:
            for o in s.goal.objects():
                parent = g.objects.get(o)
                if parent is not None and g.areas[parent].open:
                    if g.areas[parent].kind is not AreaKind.ROBOT_HAND:
                        picks.add((parent, o))
    actions = [Action.open_(a) for a in opens]
    actions.extend(Action.pick(area, obj) for area, obj in picks)
    if any_held:
        actions.extend(Action.place(a) for a in places)
    actions.append(Action.null())
    actions.sort(key=Action.sort_key)
    return actions


def dynamic_actions(b: ParticleBelief) -> list[Action]:
    if b.is_empty:
        raise EmptyBeliefError("cannot build actions for an empty belief")
    b.check_normalized()
    return dynamic_actions_for_states([p.state for p in b.particles])


# -- rollout policy and value -----------------------------------------------


def rollout_policy(s: State, unreached: list[tuple[str, str]]) -> Action:
    """Greedy one-goal-at-a-time default policy.

    ``unreached`` holds (target area, object) pairs still to be achieved, in
    goal order.  For the first actionable pair: if the goal object is held,
    open the target if closed, else place; if some other object is held,
    open its recorded source area if closed, else put it back; otherwise
    open the object's area if closed, else pick it up.  Pairs whose object
    or area is unknown, or which already hold, are skipped; with nothing
    actionable the policy is a no-op.
    """
    g = s.graph
    if not unreached:
        return Action.null()
    for goal_area, goal_obj in unreached:
        if goal_area not in g.areas or goal_obj not in g.objects:
            continue
        parent = g.objects[goal_obj]
        if parent == goal_area:
            continue
        held = g.held_object
        if held == goal_obj:
            if not g.areas[goal_area].open:
                return Action.open_(goal_area)
            return Action.place(goal_area)
        if held is not None:
            back = g.held_from
            if back is None or back not in g.areas:
                return Action.null()
            if not g.areas[back].open:
                return Action.open_(back)
            return Action.place(back)
        if not g.areas[parent].open:
            return Action.open_(parent)
        return Action.pick(parent, goal_obj)
    return Action.null()


def unreached_pairs(s: State) -> list[tuple[str, str]]:
    """(target area, object) pairs of the state's goal not yet satisfied."""
    g = s.graph
    return [(t, o) for o, t in s.goal.pairs if g.objects.get(o) != t]


def rollout_value(s: State, depth: int, cfg: RewardConfig, discount: float = 1.0) -> float:
    """Discounted return of simulating the rollout policy for up to ``depth`` steps.

    Stops early on goal completion or when the policy goes idle.
    """
    total = 0.0
    disc = 1.0
    cur = s
    for _ in range(depth):
        if goal_satisfied(cur.graph, cur.goal):
            break
        a = rollout_policy(cur, unreached_pairs(cur))
        if a.kind is ActionKind.NULL:
            break
        res = transition(cur, a, cfg)
        total += disc * res.reward
        disc *= discount
        cur = res.next_state
    return total


def upper_estimate(s: State, horizon: int, cfg: RewardConfig) -> float:
    """Admissible optimistic value: remaining gains minus unavoidable costs.

    Each unsatisfied pair needs at least a pick and a place (just a place if
    the object is already held); navigation is optimistically free.  When
    the horizon cannot fit full completion, the bound falls back to the
    best per-step gain achievable, which is zero when subgoals pay nothing.
    """
    g = s.graph
    needed = [1 if g.held_object == o else 2 for o, t in s.goal.pairs if g.objects.get(o) != t]
    if not needed:
        return 0.0
    total_needed = sum(needed)
    per_step = max(0.0, cfg.subgoal_reward - cfg.manipulation_cost)
    if total_needed <= horizon:
        full = (
            cfg.completion_reward
            + cfg.subgoal_reward * len(needed)
            - cfg.manipulation_cost * total_needed
        )
        return max(0.0, min(full, per_step * horizon + cfg.completion_reward))
    return max(0.0, per_step * horizon)


# -- search tree -------------------------------------------------------------


class _Node:
    __slots__ = ("groups", "depth", "weight", "lower", "upper", "exact", "edges")

    def __init__(self, groups, depth, weight, lower, upper, exact):
        self.groups = groups  # tuple[(State, float)], canonically sorted
        self.depth = depth
        self.weight = weight
        self.lower = lower
        self.upper = upper
        self.exact = exact
        self.edges = None  # list[_Edge] once expanded


class _Edge:
    __slots__ = ("action", "avg_reward", "children")

    def __init__(self, action, avg_reward, children):
        self.action = action
        self.avg_reward = avg_reward
        self.children = children


class BeliefTreePlanner:
    """Reusable planner; ``plan`` is deterministic given (belief, config, seed).

    The wall-clock budget is a safety net only: reproducible runs should be
    bounded by ``max_trials`` (the default configuration is).
    """

    def __init__(self, cfg: PlannerConfig, reward_cfg: RewardConfig):
        self.cfg = cfg
        self.rcfg = reward_cfg
        self.last_stats: PlanStats | None = None
        self._node_count = 0
        self._expansions = 0

    # -- node construction --------------------------------------------------

    def _make_node(self, groups, depth: int) -> _Node:
        self._node_count += 1
        weight = sum(w for _, w in groups)
        if depth >= self.cfg.max_depth or all(
            goal_satisfied(s.graph, s.goal) for s, _ in groups
        ):
            return _Node(groups, depth, weight, 0.0, 0.0, True)
        steps = min(self.cfg.rollout_depth, self.cfg.max_depth - depth)
        horizon = self.cfg.max_depth - depth
        lower = 0.0
        upper = 0.0
        for s, w in groups:
            lower += w * rollout_value(s, steps, self.rcfg, self.cfg.discount)
            upper += w * upper_estimate(s, horizon, self.rcfg)
        lower /= weight
        upper /= weight
        if upper < lower:
            upper = lower
        return _Node(groups, depth, weight, lower, upper, False)

    def _expand(self, node: _Node) -> None:
        self._expansions += 1
        states = [s for s, _ in node.groups]
        actions = dynamic_actions_for_states(states)
        edges = []
        for a in actions:
            r_acc = 0.0
            buckets: dict[tuple, dict[tuple, list]] = {}
            for s, w in node.groups:
                if goal_satisfied(s.graph, s.goal):
                    ns, r = s, 0.0
                else:
                    res = transition(s, a, self.rcfg)
                    ns, r = res.next_state, res.reward
                r_acc += w * r
                zk = ns.graph.visible().key()
                bucket = buckets.setdefault(zk, {})
                sk = ns.key()
                entry = bucket.get(sk)
                if entry is None:
                    bucket[sk] = [ns, w]
                else:
                    entry[1] += w
            children = []
            for zk in sorted(buckets):
                groups = tuple(
                    sorted(
                        ((s, w) for s, w in buckets[zk].values()),
                        key=lambda sw: sw[0].sort_key(),
                    )
                )
                children.append(self._make_node(groups, node.depth + 1))
            edges.append(_Edge(a, r_acc / node.weight, children))
        node.edges = edges

    # -- bounds ----------------------------------------------------------------

    def _q_lower(self, node: _Node, edge: _Edge) -> float:
        disc = self.cfg.discount
        acc = edge.avg_reward
        for c in edge.children:
            acc += disc * (c.weight / node.weight) * c.lower
        return acc

    def _q_upper(self, node: _Node, edge: _Edge) -> float:
        disc = self.cfg.discount
        acc = edge.avg_reward
        for c in edge.children:
            acc += disc * (c.weight / node.weight) * c.upper
        return acc

    def _backup(self, node: _Node) -> None:
        best_l = max(self._q_lower(node, e) for e in node.edges)
        best_u = max(self._q_upper(node, e) for e in node.edges)
        if best_l > node.lower:
            node.lower = best_l
        if best_u < node.upper:
            node.upper = best_u
        if node.upper < node.lower:
            node.upper = node.lower

    def _converged(self, node: _Node) -> bool:
        return node.exact or (node.upper - node.lower) <= self.cfg.gap_tolerance

    # -- search ------------------------------------------------------------------

    def _trial(self, root: _Node) -> None:
        node = root
        path = [root]
        while True:
            if self._converged(node):
                break
            if node.edges is None:
                self._expand(node)
                break
            # Most optimistic action that still has an unresolved child.
            chosen = None
            chosen_qu = float("-inf")
            for e in node.edges:
                if all(self._converged(c) for c in e.children):
                    continue
                qu = self._q_upper(node, e)
                if qu > chosen_qu:
                    chosen_qu = qu
                    chosen = e
            if chosen is None:
                break
            # Child with the largest weighted bound gap.
            best_c = None
            best_score = 0.0
            for c in chosen.children:
                if self._converged(c):
                    continue
                score = c.weight * (c.upper - c.lower)
                if best_c is None or score > best_score:
                    best_c = c
                    best_score = score
            if best_c is None:
                break
            node = best_c
            path.append(node)
        for n in reversed(path):
            if n.edges is not None:
                self._backup(n)

    def _dominant(self, root: _Node) -> bool:
        """True when the best action's lower bound beats every rival's upper bound."""
        best_edge = max(root.edges, key=lambda e: self._q_lower(root, e))
        best_l = self._q_lower(root, best_edge)
        for e in root.edges:
            if e is best_edge:
                continue
            if self._q_upper(root, e) > best_l + 1e-9:
                return False
        return True

    def plan(self, b: ParticleBelief) -> Action:
        if b.is_empty:
            raise EmptyBeliefError("cannot plan on an empty belief")
        b.check_normalized()
        t0 = time.perf_counter()
        self._node_count = 0
        self._expansions = 0
        scenarios = sample_scenarios(b, self.cfg.num_scenarios, self.cfg.seed)
        acc: dict[tuple, list] = {}
        for sc in scenarios:
            state = b.particles[sc.particle_index].state
            sk = state.key()
            entry = acc.get(sk)
            if entry is None:
                acc[sk] = [state, sc.weight]
            else:
                entry[1] += sc.weight
        groups = tuple(
            sorted(((s, w) for s, w in acc.values()), key=lambda sw: sw[0].sort_key())
        )
        root = self._make_node(groups, 0)

        trials = 0
        while not root.exact:
            if root.edges is not None:
                if (root.upper - root.lower) <= self.cfg.gap_tolerance:
                    break
                if self._dominant(root):
                    break
            if trials >= self.cfg.max_trials:
                break
            if time.perf_counter() - t0 > self.cfg.time_budget_s:
                break
            self._trial(root)
            trials += 1

        if root.edges is None:
            action = Action.null()
        else:
            best = None
            best_l = float("-inf")
            for e in root.edges:
                ql = self._q_lower(root, e)
                if ql > best_l:
                    best_l = ql
                    best = e
            action = best.action
        self.last_stats = PlanStats(
            action=str(action),
            trials=trials,
            expansions=self._expansions,
            node_count=self._node_count,
            root_lower=root.lower,
            root_upper=root.upper,
            wall_time_s=time.perf_counter() - t0,
            scenario_count=len(scenarios),
            root_unique_states=len(groups),
        )
        return action


def plan(b: ParticleBelief, cfg: PlannerConfig, reward_cfg: RewardConfig) -> Action:
    """One-shot convenience wrapper around :class:`BeliefTreePlanner`."""
    return BeliefTreePlanner(cfg, reward_cfg).plan(b)
