"""Map definitions for the prey-predator gridworld.

A map is a rectangular character grid plus a handful of scalar fields.
Grid legend:

    ``.``  empty cell
    ``A``  predator spawn
    ``p``  prey spawn (random walker)
    ``P``  prey spawn (smart, campsite-seeking)
    ``a``  arrow pickup
    ``d``  defence-tool pickup
    ``C``  campsite

The on-disk format is the grid preceded by ``key: value`` header lines,
e.g.::

    name: pretrain_4a2c
    max_steps: 60
    smart_breach_steps: 3
    grid:
    ..........
    .C......C.
    ...

Cells are addressed as ``(x, y)`` with ``(0, 0)`` in the top-left corner.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

GRID_CHARS = frozenset(".ApPadC")

_HEADER_INT_FIELDS = ("max_steps", "smart_breach_steps")


class MapError(ValueError):
    """Raised when a map file or MapSpec violates a structural constraint."""


@dataclass(frozen=True)
class MapSpec:
    """Static description of one scenario; immutable once validated."""

    name: str
    width: int
    height: int
    agent_spawns: tuple[tuple[int, int], ...]
    prey_spawns: tuple[tuple[int, int], ...]
    smart_prey: tuple[bool, ...]
    arrows: tuple[tuple[int, int], ...]
    tools: tuple[tuple[int, int], ...]
    campsites: tuple[tuple[int, int], ...]
    max_steps: int = 60
    smart_breach_steps: int | None = field(default=None)

    def __post_init__(self) -> None:
        validate_map(self)

    @property
    def n_agents(self) -> int:
        return len(self.agent_spawns)

    @property
    def n_prey(self) -> int:
        return len(self.prey_spawns)

    def to_text(self) -> str:
        rows = [["."] * self.width for _ in range(self.height)]

        def put(mark: str, cells) -> None:
            for x, y in cells:
                rows[y][x] = mark

        put("C", self.campsites)
        put("a", self.arrows)
        put("d", self.tools)
        put("A", self.agent_spawns)
        for (x, y), smart in zip(self.prey_spawns, self.smart_prey):
            rows[y][x] = "P" if smart else "p"
        lines = [f"name: {self.name}", f"max_steps: {self.max_steps}"]
        if self.smart_breach_steps is not None:
            lines.append(f"smart_breach_steps: {self.smart_breach_steps}")
        lines.append("grid:")
        lines.extend("".join(r) for r in rows)
        return "\n".join(lines) + "\n"

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


def parse_map(text: str, name: str = "unnamed") -> MapSpec:
    """Parse the header+grid format. Raises MapError on malformed input."""
    header: dict[str, str] = {}
    grid_rows: list[str] = []
    in_grid = False
    for raw in text.splitlines():
        line = raw.rstrip()
        if not in_grid:
            if not line or line.startswith("#"):
                continue
            if line == "grid:":
                in_grid = True
                continue
            if ":" not in line:
                raise MapError(f"expected 'key: value' before grid, got {line!r}")
            key, _, value = line.partition(":")
            header[key.strip()] = value.strip()
        else:
            if not line:
                continue
            grid_rows.append(line)
    if not in_grid:
        raise MapError("missing 'grid:' section")
    if not grid_rows:
        raise MapError("grid is empty")

    width = len(grid_rows[0])
    agents: list[tuple[int, int]] = []
    prey: list[tuple[int, int]] = []
    smart: list[bool] = []
    arrows: list[tuple[int, int]] = []
    tools: list[tuple[int, int]] = []
    camps: list[tuple[int, int]] = []
    for y, row in enumerate(grid_rows):
        if len(row) != width:
            raise MapError(f"grid row {y} has width {len(row)}, expected {width}")
        for x, ch in enumerate(row):
            if ch not in GRID_CHARS:
                raise MapError(f"unknown grid character {ch!r} at ({x}, {y})")
            if ch == "A":
                agents.append((x, y))
            elif ch in "pP":
                prey.append((x, y))
                smart.append(ch == "P")
            elif ch == "a":
                arrows.append((x, y))
            elif ch == "d":
                tools.append((x, y))
            elif ch == "C":
                camps.append((x, y))

    kwargs: dict[str, int] = {}
    for key in _HEADER_INT_FIELDS:
        if key in header:
            try:
                kwargs[key] = int(header[key])
            except ValueError:
                raise MapError(f"field {key!r} must be an integer, got {header[key]!r}") from None
    unknown = set(header) - set(_HEADER_INT_FIELDS) - {"name"}
    if unknown:
        raise MapError(f"unknown map fields: {sorted(unknown)}")

    return MapSpec(
        name=header.get("name", name),
        width=width,
        height=len(grid_rows),
        agent_spawns=tuple(agents),
        prey_spawns=tuple(prey),
        smart_prey=tuple(smart),
        arrows=tuple(arrows),
        tools=tuple(tools),
        campsites=tuple(camps),
        **kwargs,
    )


def validate_map(spec: MapSpec) -> None:
    """Check structural constraints, raising MapError naming the first violation."""
    if spec.width < 1 or spec.height < 1:
        raise MapError("grid must be at least 1x1")
    if spec.max_steps < 1:
        raise MapError(f"max_steps must be >= 1, got {spec.max_steps}")
    if not spec.agent_spawns:
        raise MapError("map has no predator spawns")
    if not spec.prey_spawns:
        raise MapError("map has no prey spawns")
    if len(spec.smart_prey) != len(spec.prey_spawns):
        raise MapError("smart_prey flags must match prey_spawns in length")

    seen: dict[tuple[int, int], str] = {}
    groups = (
        ("agent", spec.agent_spawns),
        ("prey", spec.prey_spawns),
        ("arrow", spec.arrows),
        ("tool", spec.tools),
        ("campsite", spec.campsites),
    )
    for kind, cells in groups:
        for cell in cells:
            x, y = cell
            if not (0 <= x < spec.width and 0 <= y < spec.height):
                raise MapError(f"{kind} at {cell} is outside the {spec.width}x{spec.height} grid")
            if cell in seen:
                raise MapError(f"{kind} at {cell} overlaps a {seen[cell]}")
            seen[cell] = kind

    n_smart = sum(spec.smart_prey)
    if spec.campsites and n_smart != 1:
        raise MapError(f"maps with campsites need exactly one smart prey, got {n_smart}")
    if not spec.campsites and n_smart:
        raise MapError("smart prey requires at least one campsite")
    if spec.smart_breach_steps is not None:
        if not spec.campsites:
            raise MapError("smart_breach_steps set but map has no campsites")
        sx, sy = spec.prey_spawns[spec.smart_prey.index(True)]
        dist = min(abs(sx - cx) + abs(sy - cy) for cx, cy in spec.campsites)
        if dist != spec.smart_breach_steps:
            raise MapError(
                f"smart prey is {dist} moves from the nearest campsite, "
                f"but smart_breach_steps says {spec.smart_breach_steps}"
            )


# Built-in scenarios. Shared layout motifs (tool directly below each campsite
# with a predator below it, arrows directly above the remaining predators) keep
# the egocentric observation windows comparable across team sizes, which is what
# makes a policy trained on the small map reusable on the larger ones.

_PRETRAIN_4A2C = """\
name: pretrain_4a2c
max_steps: 60
smart_breach_steps: 3
grid:
..........
.C......C.
.d....P.d.
.A......A.
p..p.pp..p
.pp..pp.p.
p.p.pp.p.p
.pap..pap.
p.A.pp.A.p
..p.p..p..
"""

_MODERATE_8A2C = """\
name: moderate_8a2c
max_steps: 60
smart_breach_steps: 6
grid:
..............
.C..........C.
.d....P.....d.
.A..........A.
..............
..p..p..p..p..
.p..p..p..p..p
..p..p..p..p..
.p..p..p..p..p
..a.a.a.a.a.a.
..A.A.A.A.A.A.
..............
..p..pp..pp.p.
..............
"""

_HARD_8A3C = """\
name: hard_8a3c
max_steps: 60
smart_breach_steps: 3
grid:
..............
.C....C.....C.
.d..P.d.....d.
.A....A.....A.
..............
..p..p...p..p.
.p..p..p..p..p
..p..p..p..p..
.p..p..p..p..p
..a..a..a.a.a.
..A..A..A.A.A.
..............
..p..pp..p..p.
..............
"""

BUILTIN_MAPS: dict[str, str] = {
    "pretrain_4a2c": _PRETRAIN_4A2C,
    "moderate_8a2c": _MODERATE_8A2C,
    "hard_8a3c": _HARD_8A3C,
}


def get_map(name_or_path: str) -> MapSpec:
    """Resolve a built-in map name, or fall back to reading a file path."""
    if name_or_path in BUILTIN_MAPS:
        return parse_map(BUILTIN_MAPS[name_or_path], name=name_or_path)
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MapError(f"no built-in map or readable file named {name_or_path!r}: {exc}") from exc
    return parse_map(text, name=name_or_path)
