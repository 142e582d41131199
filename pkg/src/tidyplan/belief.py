"""Weighted particle beliefs and their updates.

The belief update has two halves.  Bayesian filtering pushes every particle
through the deterministic transition (prediction) and discards particles
whose predicted visible scene contradicts the new observation (elimination;
the 0/1 observation model makes reweighting unnecessary).  When the
surviving probability mass drops below ``1 - epsilon``, freshly generated
particles are merged in, scaled by the lost mass, so the belief stays a
proper distribution while regaining diversity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .pomdp import (
    Action,
    Observation,
    PlacementGoal,
    RewardConfig,
    State,
    goal_satisfied,
    observation_likelihood,
    transition,
)

# Particles lighter than this after merging are dropped as numerical dust.
MIN_WEIGHT = 1e-12

NORMALIZATION_TOL = 1e-9


class BeliefError(ValueError):
    pass


class EmptyBeliefError(BeliefError):
    pass


class MissingSupplementError(BeliefError):
    """Surviving weight fell below the threshold but no supplement was given."""


class SpuriousSupplementError(BeliefError):
    """A supplement was given although the surviving weight is above the threshold."""


@dataclass(frozen=True)
class Particle:
    state: State
    weight: float

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise BeliefError(f"particle weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class BeliefUpdateConfig:
    """``epsilon`` sets the supplementation trigger: supplement when the
    surviving weight falls strictly below ``1 - epsilon``."""

    epsilon: float = 0.7
    duplicate_merge: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")

    @property
    def supplement_threshold(self) -> float:
        return 1.0 - self.epsilon


@dataclass(frozen=True)
class ParticleBelief:
    """A set of weighted state hypotheses.

    Particles are kept in a canonical order (sorted by state) and never
    contain two structurally equal states; construction through
    :func:`make_belief` enforces both, which keeps every downstream
    computation independent of the order updates were applied in.
    """

    particles: tuple[Particle, ...]
    normalized: bool

    @property
    def size(self) -> int:
        return len(self.particles)

    @property
    def is_empty(self) -> bool:
        return not self.particles

    def total_weight(self) -> float:
        return sum(p.weight for p in self.particles)

    def max_weight_particle(self) -> Particle:
        if not self.particles:
            raise EmptyBeliefError("belief has no particles")
        # Canonical particle order makes the argmax deterministic under ties.
        return max(self.particles, key=lambda p: p.weight)

    def check_normalized(self) -> None:
        if not self.particles:
            raise EmptyBeliefError("belief has no particles")
        total = self.total_weight()
        if abs(total - 1.0) > 1e-6:
            raise BeliefError(f"belief is not normalized (total weight {total})")

    def dump_text(self) -> str:
        """Diagnostic dump: particles sorted by descending weight."""
        lines = [f"particles {self.size} normalized {int(self.normalized)}"]
        ranked = sorted(
            self.particles, key=lambda p: (-p.weight, p.state.sort_key())
        )
        for i, p in enumerate(ranked):
            lines.append(f"# particle {i} weight {p.weight:.12g}")
            lines.append(f"goal: {p.state.goal.canonical_text() or '-'}")
            lines.append(p.state.graph.canonical_text())
        return "\n".join(lines) + "\n"


def make_belief(
    weighted_states: Iterable[tuple[State, float]],
    *,
    normalize: bool = False,
    merge: bool = True,
) -> ParticleBelief:
    """Build a belief, merging duplicate states and pruning dust weights."""
    if merge:
        acc: dict[tuple, tuple[State, float]] = {}
        for state, w in weighted_states:
            k = state.key()
            if k in acc:
                acc[k] = (acc[k][0], acc[k][1] + w)
            else:
                acc[k] = (state, w)
        items = list(acc.values())
    else:
        items = list(weighted_states)
    items = [(s, w) for s, w in items if w > MIN_WEIGHT]
    items.sort(key=lambda sw: sw[0].sort_key())
    total = sum(w for _, w in items)
    if normalize:
        if total <= 0:
            return ParticleBelief(particles=(), normalized=True)
        items = [(s, w / total) for s, w in items]
    flagged = normalize or abs(total - 1.0) <= NORMALIZATION_TOL
    return ParticleBelief(
        particles=tuple(Particle(s, w) for s, w in items),
        normalized=flagged,
    )


def predict(b: ParticleBelief, a: Action, cfg: RewardConfig) -> ParticleBelief:
    """Push every particle through the transition model; weights carry over."""
    if b.is_empty:
        raise EmptyBeliefError("cannot predict an empty belief")
    moved = ((transition(p.state, a, cfg).next_state, p.weight) for p in b.particles)
    out = make_belief(moved)
    return ParticleBelief(particles=out.particles, normalized=b.normalized)


def detect_wrong_goals(
    b: ParticleBelief, z: Observation, task_done: bool
) -> list[PlacementGoal]:
    """Goals hypothesized by ``b`` that are visibly satisfied while the task is not done.

    Such a goal is provably not the human's intent; callers append these to
    their failed-goal ledger before eliminating.
    """
    if task_done:
        return []
    seen: list[PlacementGoal] = []
    for p in b.particles:
        g = p.state.goal
        if g not in seen and len(g) > 0 and goal_satisfied(z.graph, g):
            seen.append(g)
    return seen


def eliminate(
    b: ParticleBelief,
    z: Observation,
    task_done: bool,
    failed_goals: Iterable[PlacementGoal] = (),
) -> tuple[ParticleBelief, float]:
    """Drop particles contradicted by the observation or by goal evidence.

    Removes particles whose predicted visible scene differs from ``z``,
    particles whose goal is already known wrong, and -- while the task is
    not done -- particles whose goal is fully satisfied in ``z``.  Surviving
    weights are returned *unnormalized* together with their sum.
    """
    b.check_normalized()
    failed = set(failed_goals)
    survivors: list[tuple[State, float]] = []
    for p in b.particles:
        if observation_likelihood(p.state, z) == 0.0:
            continue
        goal = p.state.goal
        if goal in failed:
            continue
        if not task_done and len(goal) > 0 and goal_satisfied(z.graph, goal):
            continue
        survivors.append((p.state, p.weight))
    out = make_belief(survivors)
    return ParticleBelief(particles=out.particles, normalized=False), out.total_weight()


def hybrid_update(
    b_filtered: ParticleBelief,
    surviving_weight: float,
    b_generated: ParticleBelief | None,
    cfg: BeliefUpdateConfig,
) -> ParticleBelief:
    """Renormalize the filtered belief, or merge in generated particles.

    Above the threshold the filtered belief is simply rescaled by the
    surviving weight.  Below it, generated particles (a normalized belief)
    are scaled by the lost mass ``1 - surviving_weight`` and merged, so the
    output always sums to one.
    """
    threshold = cfg.supplement_threshold
    if surviving_weight < threshold:
        if b_generated is None:
            raise MissingSupplementError(
                f"surviving weight {surviving_weight} below threshold {threshold} "
                "but no supplement belief was provided"
            )
        b_generated.check_normalized()
        scale = 1.0 - surviving_weight
        merged = [(p.state, p.weight) for p in b_filtered.particles]
        merged.extend((p.state, p.weight * scale) for p in b_generated.particles)
        out = make_belief(merged, merge=cfg.duplicate_merge)
        result = ParticleBelief(particles=out.particles, normalized=True)
    else:
        if b_generated is not None:
            raise SpuriousSupplementError(
                f"surviving weight {surviving_weight} is above threshold {threshold}; "
                "a supplement belief must not be provided"
            )
        if b_filtered.is_empty or surviving_weight <= 0:
            raise EmptyBeliefError("filtered belief is empty and cannot be renormalized")
        rescaled = [(p.state, p.weight / surviving_weight) for p in b_filtered.particles]
        out = make_belief(rescaled, merge=cfg.duplicate_merge)
        result = ParticleBelief(particles=out.particles, normalized=True)
    result.check_normalized()
    return result


def collapse_to_max(b: ParticleBelief) -> ParticleBelief:
    """Replace the belief by its single highest-weight particle (ablation aid)."""
    top = b.max_weight_particle()
    return ParticleBelief(particles=(Particle(top.state, 1.0),), normalized=True)


def parse_dump(text: str) -> list[tuple[float, str, str]]:
    """Parse a belief dump back into (weight, goal text, graph text) rows."""
    rows: list[tuple[float, str, str]] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("# particle"):
            weight = float(line.rsplit(" ", 1)[1])
            goal = lines[i + 1].removeprefix("goal: ")
            j = i + 2
            body: list[str] = []
            while j < len(lines) and not lines[j].startswith("# particle"):
                body.append(lines[j])
                j += 1
            rows.append((weight, goal, "\n".join(body).strip()))
            i = j
        else:
            i += 1
    return rows
