"""Hypothesis generator implementations.

``MockGenerator`` is a deterministic, task-aware stand-in used by all
correctness tests and offline benchmarks: it emits the task's true goal
among decoy goals, and true hidden locations among decoy areas, at
configurable support weights.  ``LlmGenerator`` is a chat-completion HTTP
client that drives a real language model with the shipped system prompts.
"""

from __future__ import annotations

import json
import random
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import TYPE_CHECKING

import requests

from .hypotheses import (
    EmptyResultError,
    GeneratorError,
    GoalCandidate,
    LocationCandidate,
    QueryContext,
)
from .pomdp import PlacementGoal
from .scene import AreaKind, NodeId

if TYPE_CHECKING:
    from .environment import TaskSpec


@dataclass
class GeneratorUsage:
    """Per-episode accumulation of generator cost; all fields only grow."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    query_count: int = 0
    wall_time_s: float = 0.0

    def record(self, prompt_tokens: int, completion_tokens: int, wall_time_s: float) -> None:
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        self.query_count += 1
        self.wall_time_s += wall_time_s

    def as_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "query_count": self.query_count,
            "wall_time_s": self.wall_time_s,
        }


class MockGenerator:
    """Seeded oracle-flavored generator built from a task's ground truth.

    Goal queries return the true goal at ``true_goal_weight`` plus decoy
    goals that swap one true object for a distractor object from the scene
    (so the object-to-target mapping stays consistent across candidates).
    Location queries return the object's true area at
    ``true_location_weight`` plus decoy closed areas.  Every draw is keyed
    by the seed and the query arguments, never by call order, so results
    are reproducible and safe under concurrent calls.
    """

    max_concurrency = 1

    def __init__(
        self,
        task: "TaskSpec",
        seed: int = 0,
        true_goal_weight: float = 0.55,
        true_location_weight: float = 0.55,
    ):
        if not 0.0 < true_goal_weight <= 1.0 or not 0.0 < true_location_weight <= 1.0:
            raise ValueError("support weights must be in (0, 1]")
        self.seed = seed
        self.true_goal_weight = true_goal_weight
        self.true_location_weight = true_location_weight
        self.usage = GeneratorUsage()
        self._true_goal = task.goal_set[0]
        self._initial_area: dict[NodeId, NodeId] = {o: a for a, o in task.placements}

    def propose_goals(self, ctx: QueryContext, max_candidates: int) -> list[GoalCandidate]:
        t0 = time.perf_counter()
        failed = set(ctx.failed_goals)
        out = [GoalCandidate(self._true_goal, self.true_goal_weight)]
        decoys = self._decoy_goals(ctx, max_candidates - 1, failed)
        if decoys:
            share = (1.0 - self.true_goal_weight) / len(decoys)
            if share > 0:
                out.extend(GoalCandidate(g, share) for g in decoys)
        self.usage.record(0, 0, time.perf_counter() - t0)
        return out

    def _decoy_goals(
        self, ctx: QueryContext, count: int, failed: set[PlacementGoal]
    ) -> list[PlacementGoal]:
        if count <= 0:
            return []
        g = ctx.observation.graph
        true_objs = set(self._true_goal.objects())
        pool = [o for o in sorted(self._initial_area) if o not in true_objs]
        # Visible distractors first: they make decoys that need no extra
        # location hypotheses, which keeps decoy particles heavy.
        pool.sort(key=lambda o: (o not in g.objects, o))
        decoys: list[PlacementGoal] = []
        true_pairs = self._true_goal.pairs
        slot = 0
        for d in pool:
            if len(decoys) >= count:
                break
            target = self._decoy_target(ctx, d)
            if target is None:
                continue
            kept = tuple(p for i, p in enumerate(true_pairs) if i != slot % len(true_pairs))
            goal = PlacementGoal(kept + ((d, target),))
            slot += 1
            if goal in failed or goal == self._true_goal or goal in decoys:
                continue
            decoys.append(goal)
        return decoys

    def _decoy_target(self, ctx: QueryContext, obj: NodeId) -> NodeId | None:
        g = ctx.observation.graph
        avoid = {self._initial_area.get(obj), g.objects.get(obj)}
        options = [
            a.id
            for a in g.areas.values()
            if a.kind not in (AreaKind.ROBOT_HAND, AreaKind.HUMAN_HAND)
            and a.id not in avoid
        ]
        if not options:
            return None
        rng = random.Random(f"{self.seed}:target:{obj}")
        return rng.choice(sorted(options))

    def propose_locations(
        self, ctx: QueryContext, obj: NodeId, max_candidates: int
    ) -> list[LocationCandidate]:
        t0 = time.perf_counter()
        g = ctx.observation.graph
        closed = sorted(a.id for a in g.areas.values() if not a.open)
        try:
            if not closed:
                return []
            true_area = self._initial_area.get(obj)
            rng = random.Random(f"{self.seed}:loc:{obj}")
            if true_area not in closed:
                # Unknown or displaced object: spread evenly over a seeded
                # sample of closed areas.
                picks = rng.sample(closed, min(max_candidates, len(closed)))
                return [LocationCandidate(a, 1.0 / len(picks)) for a in sorted(picks)]
            others = [a for a in closed if a != true_area]
            n_decoys = min(max_candidates - 1, len(others))
            decoys = rng.sample(others, n_decoys) if n_decoys > 0 else []
            out = [LocationCandidate(true_area, self.true_location_weight)]
            if decoys:
                share = (1.0 - self.true_location_weight) / len(decoys)
                if share > 0:
                    out.extend(LocationCandidate(a, share) for a in sorted(decoys))
            return out
        finally:
            self.usage.record(0, 0, time.perf_counter() - t0)


@dataclass(frozen=True)
class LlmGeneratorConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4.1"
    api_key_env: str = "OPENAI_API_KEY"
    api_key: str | None = None
    temperature: float = 0.1
    timeout_s: float = 120.0
    max_retries: int = 3
    max_concurrency: int = 4


_FENCED_JSON = re.compile(r"```json\s*(.*?)```", re.DOTALL)


def parse_answer_block(text: str) -> dict:
    """Extract and parse the fenced JSON answer from a model reply.

    The last fenced ```json block wins; replies consisting of bare JSON are
    accepted too.  Raises ValueError with a short reason otherwise.
    """
    blocks = _FENCED_JSON.findall(text)
    payload = blocks[-1] if blocks else text.strip()
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as e:
        raise ValueError(f"not valid JSON: {e}") from None
    if not isinstance(data, dict) or "answer" not in data:
        raise ValueError('missing top-level "answer" key')
    if not isinstance(data["answer"], list):
        raise ValueError('"answer" must be a list')
    return data


def parse_goal_answer(data: dict) -> list[GoalCandidate]:
    out: list[GoalCandidate] = []
    for entry in data["answer"]:
        pairs = []
        for item in entry.get("objects", []):
            obj = str(item["object"]).strip().replace(" ", "_")
            pairs.append((obj, str(item["target_area"]).strip()))
        prob = float(entry.get("probability", 0.0))
        if pairs and 0.0 < prob <= 1.0:
            try:
                out.append(GoalCandidate(PlacementGoal(tuple(pairs)), prob))
            except ValueError:
                continue
    return out


def parse_location_answer(data: dict) -> list[LocationCandidate]:
    out: list[LocationCandidate] = []
    for entry in data["answer"]:
        area = str(entry.get("initial_area", "")).strip()
        prob = float(entry.get("probability", 0.0))
        if area and 0.0 < prob <= 1.0:
            out.append(LocationCandidate(area, prob))
    return out


def _load_prompt(name: str) -> str:
    return (
        resources.files("tidyplan").joinpath(f"data/prompts/{name}").read_text("utf-8")
    )


class LlmGenerator:
    """Chat-completion client implementing the hypothesis generator interface.

    Each query sends a fixed system prompt plus a user message carrying the
    task instruction, the textualized observation, optional action history,
    and the candidate cap.  Unparseable replies are retried with the parse
    error appended to the conversation, up to ``max_retries`` times.
    """

    def __init__(self, cfg: LlmGeneratorConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.max_concurrency = cfg.max_concurrency
        self.usage = GeneratorUsage()
        self._session = session or requests.Session()
        self._goal_prompt = _load_prompt("goal_hypotheses_system.txt")
        self._location_prompt = _load_prompt("location_hypotheses_system.txt")

    # -- transport ----------------------------------------------------------

    def _chat(self, messages: list[dict]) -> str:
        import os

        key = self.cfg.api_key or os.environ.get(self.cfg.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        t0 = time.perf_counter()
        try:
            resp = self._session.post(
                self.cfg.endpoint, json=body, headers=headers, timeout=self.cfg.timeout_s
            )
            resp.raise_for_status()
            data = resp.json()
        except (requests.RequestException, ValueError) as e:
            self.usage.record(0, 0, time.perf_counter() - t0)
            raise GeneratorError(f"chat request failed: {e}") from e
        usage = data.get("usage", {})
        self.usage.record(
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
            time.perf_counter() - t0,
        )
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise GeneratorError(f"malformed chat response: {e}") from e

    def _query(self, system: str, user: str, parse) -> list:
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]
        last_error = "no attempts made"
        for _ in range(max(1, self.cfg.max_retries)):
            reply = self._chat(messages)
            try:
                return parse(parse_answer_block(reply))
            except ValueError as e:
                last_error = str(e)
                messages.append({"role": "assistant", "content": reply})
                messages.append(
                    {
                        "role": "user",
                        "content": (
                            f"Your previous answer could not be parsed: {last_error}. "
                            "Reply again with a single valid fenced ```json block in "
                            "the required format."
                        ),
                    }
                )
        raise GeneratorError(f"unparseable generator output after retries: {last_error}")

    # -- queries ------------------------------------------------------------

    def _user_message(self, ctx: QueryContext, extra: str) -> str:
        parts = [f"Task instruction: {ctx.instruction}", "", ctx.observation_text()]
        if ctx.history_text:
            parts += ["", "Action history so far:", ctx.history_text]
        if extra:
            parts += ["", extra]
        return "\n".join(parts)

    def propose_goals(self, ctx: QueryContext, max_candidates: int) -> list[GoalCandidate]:
        user = self._user_message(ctx, f"For this query, k = {max_candidates}.")
        return self._query(self._goal_prompt, user, parse_goal_answer)

    def propose_locations(
        self, ctx: QueryContext, obj: NodeId, max_candidates: int
    ) -> list[LocationCandidate]:
        user = self._user_message(
            ctx,
            f"The object of interest is: {obj}.\nFor this query, k = {max_candidates}.",
        )
        candidates = self._query(self._location_prompt, user, parse_location_answer)
        if not candidates:
            raise EmptyResultError(f"generator returned no locations for {obj!r}")
        return candidates
