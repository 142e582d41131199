"""Symbolic kitchen world model.

The world is a four-layer graph: a single implicit room, a set of areas
(surfaces, shelves, cabinets, drawers, appliance interiors, plus the human
hand and the robot hand), the objects contained in those areas, and the
robot's current location.  Values are immutable: every mutation returns a
new graph, so graphs can be shared freely between belief particles and
search nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

NodeId = str


class SceneError(ValueError):
    """An operation violated a scene-graph precondition."""


class UnknownAreaError(SceneError):
    pass


class UnknownObjectError(SceneError):
    pass


class AreaAlreadyOpenError(SceneError):
    pass


class AreaKind(str, Enum):
    FURNITURE_INNER_SPACE = "furniture-inner-space"
    CABINET = "cabinet"
    DRAWER = "drawer"
    SURFACE = "surface"
    SHELF = "shelf"
    HUMAN_HAND = "human-hand"
    ROBOT_HAND = "robot-hand"


# These kinds can never be closed; the rest start closed unless a config
# says otherwise.
ALWAYS_OPEN_KINDS = frozenset(
    {AreaKind.SURFACE, AreaKind.SHELF, AreaKind.HUMAN_HAND, AreaKind.ROBOT_HAND}
)


@dataclass(frozen=True)
class AreaNode:
    """A storage location: fixed kind and position, mutable open flag."""

    id: NodeId
    kind: AreaKind
    open: bool
    position: tuple[float, float]

    def __post_init__(self) -> None:
        if self.kind in ALWAYS_OPEN_KINDS and not self.open:
            raise SceneError(f"area {self.id!r} of kind {self.kind.value} must be open")


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Immutable world state: areas, object containment, robot pose and hand.

    ``objects`` maps each object id to the id of its parent area.  A held
    object's parent is the robot-hand area; ``held_from`` remembers the area
    it was picked from (None when unknown, e.g. for an object the robot
    started the episode holding).  ``held_from`` is bookkeeping for the
    rollout policy and is excluded from structural equality.
    """

    areas: dict[NodeId, AreaNode]
    objects: dict[NodeId, NodeId]
    robot_at: NodeId
    held_object: NodeId | None = None
    held_from: NodeId | None = None
    _key: tuple = field(default=None, repr=False, compare=False)

    # -- identity ---------------------------------------------------------

    def key(self) -> tuple:
        """Hashable structural key: robot pose, hand, open flags, containment."""
        k = self._key
        if k is None:
            k = (
                self.robot_at,
                self.held_object or "",
                tuple(sorted((a.id, a.open) for a in self.areas.values())),
                tuple(sorted(self.objects.items())),
            )
            object.__setattr__(self, "_key", k)
        return k

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return (
            self.robot_at == other.robot_at
            and self.held_object == other.held_object
            and self.objects == other.objects
            and self.areas == other.areas
        )

    def __hash__(self) -> int:
        return hash(self.key())

    # -- lookups ----------------------------------------------------------

    @property
    def hand_id(self) -> NodeId:
        """Id of the robot-hand area."""
        for a in self.areas.values():
            if a.kind is AreaKind.ROBOT_HAND:
                return a.id
        raise SceneError("scene has no robot-hand area")

    def has_area(self, area: NodeId) -> bool:
        return area in self.areas

    def is_open(self, area: NodeId) -> bool:
        try:
            return self.areas[area].open
        except KeyError:
            raise UnknownAreaError(f"unknown area {area!r}") from None

    def object_parent(self, obj: NodeId) -> NodeId:
        try:
            return self.objects[obj]
        except KeyError:
            raise UnknownObjectError(f"unknown object {obj!r}") from None

    def objects_in(self, area: NodeId) -> list[NodeId]:
        return sorted(o for o, p in self.objects.items() if p == area)

    # -- projections and mutations ---------------------------------------

    def visible(self) -> SceneGraph:
        """Copy with every object inside a closed area removed.

        Areas, open flags, robot pose and hand contents are unchanged; a held
        object is always visible because the robot-hand area is always open.
        """
        keep = {o: p for o, p in self.objects.items() if self.areas[p].open}
        if len(keep) == len(self.objects):
            return self
        return SceneGraph(
            areas=self.areas,
            objects=keep,
            robot_at=self.robot_at,
            held_object=self.held_object,
            held_from=self.held_from,
        )

    def with_area_open(self, area: NodeId) -> SceneGraph:
        """Copy with ``area`` opened. The area must exist and be closed."""
        node = self.areas.get(area)
        if node is None:
            raise UnknownAreaError(f"unknown area {area!r}")
        if node.open:
            raise AreaAlreadyOpenError(f"area {area!r} is already open")
        areas = dict(self.areas)
        areas[area] = AreaNode(node.id, node.kind, True, node.position)
        return SceneGraph(
            areas=areas,
            objects=self.objects,
            robot_at=self.robot_at,
            held_object=self.held_object,
            held_from=self.held_from,
        )

    def with_object_moved(self, obj: NodeId, dest: NodeId) -> SceneGraph:
        """Copy with ``obj`` reparented to ``dest``, keeping hand bookkeeping consistent."""
        if obj not in self.objects:
            raise UnknownObjectError(f"unknown object {obj!r}")
        if dest not in self.areas:
            raise UnknownAreaError(f"unknown area {dest!r}")
        old_parent = self.objects[obj]
        objects = dict(self.objects)
        objects[obj] = dest
        held = self.held_object
        held_from = self.held_from
        hand = self.hand_id
        if dest == hand:
            held = obj
            held_from = old_parent if old_parent != hand else held_from
        elif obj == held:
            held = None
            held_from = None
        return SceneGraph(
            areas=self.areas,
            objects=objects,
            robot_at=self.robot_at,
            held_object=held,
            held_from=held_from,
        )

    def with_robot_at(self, area: NodeId) -> SceneGraph:
        if area not in self.areas:
            raise UnknownAreaError(f"unknown area {area!r}")
        if area == self.robot_at:
            return self
        return SceneGraph(
            areas=self.areas,
            objects=self.objects,
            robot_at=area,
            held_object=self.held_object,
            held_from=self.held_from,
        )

    # -- validation and serialization --------------------------------------

    def validate(self) -> None:
        """Raise SceneError if any structural invariant is violated."""
        if self.robot_at not in self.areas:
            raise SceneError(f"robot_at names unknown area {self.robot_at!r}")
        hand = self.hand_id
        for obj, parent in self.objects.items():
            if parent not in self.areas:
                raise SceneError(f"object {obj!r} is in unknown area {parent!r}")
        in_hand = [o for o, p in self.objects.items() if p == hand]
        if len(in_hand) > 1:
            raise SceneError(f"more than one object in the robot hand: {in_hand}")
        if self.held_object is None:
            if in_hand:
                raise SceneError(f"object {in_hand[0]!r} in hand but held_object unset")
        else:
            if self.held_object not in self.objects:
                raise SceneError(f"held_object {self.held_object!r} does not exist")
            if self.objects[self.held_object] != hand:
                raise SceneError(f"held_object {self.held_object!r} is not in the hand")

    def canonical_text(self) -> str:
        """Sorted, line-oriented form used by golden tests and belief dumps."""
        lines = []
        for a in sorted(self.areas.values(), key=lambda a: a.id):
            lines.append(
                f"area {a.id} kind={a.kind.value} open={int(a.open)} "
                f"pos=({a.position[0]:g},{a.position[1]:g})"
            )
        for obj in sorted(self.objects):
            lines.append(f"object {obj} in {self.objects[obj]}")
        lines.append(f"robot_at {self.robot_at}")
        lines.append(f"held {self.held_object or '-'}")
        return "\n".join(lines)


def visible(g: SceneGraph) -> SceneGraph:
    """Project ``g`` onto what the robot can observe."""
    return g.visible()


def set_area_open(g: SceneGraph, area: NodeId) -> SceneGraph:
    return g.with_area_open(area)


def move_object(g: SceneGraph, obj: NodeId, dest: NodeId) -> SceneGraph:
    return g.with_object_moved(obj, dest)


def move_cost(g: SceneGraph, frm: NodeId, to: NodeId, cfg) -> int:
    """Navigation cost between two areas.

    Rounded (half away from zero) scaled Euclidean distance, clamped to
    [0, cfg.nav_max]; zero when the areas coincide.  ``cfg`` needs
    ``nav_scale`` and ``nav_max`` attributes.
    """
    if frm not in g.areas:
        raise UnknownAreaError(f"unknown area {frm!r}")
    if to not in g.areas:
        raise UnknownAreaError(f"unknown area {to!r}")
    if frm == to:
        return 0
    d = math.dist(g.areas[frm].position, g.areas[to].position)
    cost = math.floor(cfg.nav_scale * d + 0.5)
    return max(0, min(int(cfg.nav_max), cost))


def build_scene(
    areas: list[AreaNode],
    placements: dict[NodeId, NodeId],
    robot_at: NodeId,
    held_object: NodeId | None = None,
) -> SceneGraph:
    """Assemble and validate a scene graph from parts.

    ``placements`` maps object ids to area ids; a held object should be
    mapped to the robot-hand area (or omitted and passed as ``held_object``,
    in which case it is placed there automatically).
    """
    area_map = {a.id: a for a in areas}
    if len(area_map) != len(areas):
        raise SceneError("duplicate area ids")
    g = SceneGraph(areas=area_map, objects=dict(placements), robot_at=robot_at)
    if held_object is not None and held_object not in g.objects:
        objects = dict(g.objects)
        objects[held_object] = g.hand_id
        g = SceneGraph(areas=area_map, objects=objects, robot_at=robot_at)
    if held_object is None:
        hand = g.hand_id
        in_hand = [o for o, p in g.objects.items() if p == hand]
        held_object = in_hand[0] if in_hand else None
    g = SceneGraph(
        areas=g.areas, objects=g.objects, robot_at=robot_at, held_object=held_object
    )
    g.validate()
    return g
