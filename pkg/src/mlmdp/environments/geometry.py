"""Grid geometry shared by the maze and traffic environments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from ..errors import InvalidGeometry

Cell = tuple[int, int]

DIRECTIONS: tuple[tuple[str, Cell], ...] = (
    ("right", (1, 0)),
    ("up", (0, 1)),
    ("left", (-1, 0)),
    ("down", (0, -1)),
)
DIRECTION_NAMES = tuple(name for name, _ in DIRECTIONS)
OFFSETS = dict(DIRECTIONS)

X_RANGE = (1, 15)
Y_RANGE = (1, 8)


def shift(cell: Cell, direction: str) -> Cell:
    dx, dy = OFFSETS[direction]
    return cell[0] + dx, cell[1] + dy


def rectangle(x_range: tuple[int, int], y_range: tuple[int, int]) -> tuple[Cell, ...]:
    """Cells of a closed rectangle in (x, y) lexicographic order."""
    return tuple((x, y) for x in range(x_range[0], x_range[1] + 1) for y in range(y_range[0], y_range[1] + 1))


def neighbourhood(cell: Cell) -> frozenset[Cell]:
    """Cells at L1 distance one, on or off the grid."""
    return frozenset(shift(cell, d) for d in DIRECTION_NAMES)


def cell_label(cell: Cell) -> str:
    return f"{cell[0]},{cell[1]}"


@dataclass(frozen=True)
class MazeGeometry:
    """Four rooms separated by one block row and one block column with three doors.

    Door 1 and door 3 sit in the block column, door 2 in the block row.
    """

    doors: tuple[Cell, Cell, Cell]
    keys: tuple[Cell, Cell, Cell]
    goal: Cell
    variant: str = "base"
    x_range: tuple[int, int] = X_RANGE
    y_range: tuple[int, int] = Y_RANGE

    def __post_init__(self) -> None:
        self.validate()

    @property
    def column(self) -> int:
        return self.doors[0][0]

    @property
    def row(self) -> int:
        return self.doors[1][1]

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        return rectangle(self.x_range, self.y_range)

    @cached_property
    def blocks(self) -> frozenset[Cell]:
        line = {c for c in self.cells if c[1] == self.row or c[0] == self.column}
        return frozenset(line - set(self.doors))

    @cached_property
    def open_cells(self) -> tuple[Cell, ...]:
        """Every cell that is not a block; doors included."""
        return tuple(c for c in self.cells if c not in self.blocks)

    def room_of(self, cell: Cell) -> int | None:
        x, y = cell
        if x == self.column or y == self.row:
            return None
        return 1 + (x > self.column) + 2 * (y > self.row)

    @cached_property
    def rooms(self) -> dict[int, tuple[Cell, ...]]:
        return {k: tuple(c for c in self.cells if self.room_of(c) == k) for k in (1, 2, 3, 4)}

    def contains(self, cell: Cell) -> bool:
        return self.x_range[0] <= cell[0] <= self.x_range[1] and self.y_range[0] <= cell[1] <= self.y_range[1]

    def validate(self) -> None:
        door1, door2, door3 = self.doors
        for cell in (*self.doors, *self.keys, self.goal):
            if not self.contains(cell):
                raise InvalidGeometry(f"{cell} lies outside the grid")
        if len(set(self.doors)) != 3:
            raise InvalidGeometry("doors must be distinct")
        if not (door1[0] == door3[0] and door1[1] < door2[1] < door3[1]):
            raise InvalidGeometry("doors 1 and 3 must share the block column, below and above the block row")
        if door2[0] == door1[0]:
            raise InvalidGeometry("door 2 must not sit on the block column")
        if self.variant != "primed" and not door2[0] < door1[0]:
            raise InvalidGeometry("door 2 must lie left of the block column")
        if not (self.x_range[0] < door1[0] < self.x_range[1] and self.y_range[0] < door2[1] < self.y_range[1]):
            raise InvalidGeometry("the block lines must leave four non-empty rooms")
        for cell in (*self.keys, self.goal):
            if self.room_of(cell) is None:
                raise InvalidGeometry(f"{cell} is not inside a room")
        if len(set(self.keys) | {self.goal}) != 4:
            raise InvalidGeometry("keys and goal must occupy distinct cells")


BASE_MAZE = MazeGeometry(doors=((10, 2), (9, 4), (10, 5)), keys=((1, 3), (1, 1), (1, 8)), goal=(15, 8))
PRIMED_MAZE = MazeGeometry(doors=((10, 3), (11, 4), (10, 5)), keys=((1, 1), (15, 1), (15, 8)), goal=(1, 8),
                           variant="primed")
DOUBLE_PRIMED_MAZE = MazeGeometry(doors=((10, 2), (9, 4), (10, 5)), keys=((1, 3), (1, 1), (2, 1)), goal=(15, 8),
                                  variant="double-primed")

MAZE_VARIANTS = {"base": BASE_MAZE, "primed": PRIMED_MAZE, "double-primed": DOUBLE_PRIMED_MAZE}


def variant_geometry(tag: str) -> MazeGeometry:
    """Maze geometry by variant tag; underscores and dashes are interchangeable."""
    key = tag.replace("_", "-")
    if key not in MAZE_VARIANTS:
        raise InvalidGeometry(f"unknown maze variant {tag!r}")
    return MAZE_VARIANTS[key]


@dataclass(frozen=True)
class TrafficGeometry:
    """Grid with jam rows and jam columns."""

    jam_rows: tuple[int, ...]
    jam_columns: tuple[int, ...]
    variant: str = "sparse"
    x_range: tuple[int, int] = X_RANGE
    y_range: tuple[int, int] = Y_RANGE

    def __post_init__(self) -> None:
        if any(not self.y_range[0] <= y <= self.y_range[1] for y in self.jam_rows):
            raise InvalidGeometry("jam row outside the grid")
        if any(not self.x_range[0] <= x <= self.x_range[1] for x in self.jam_columns):
            raise InvalidGeometry("jam column outside the grid")

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        return rectangle(self.x_range, self.y_range)

    def contains(self, cell: Cell) -> bool:
        return self.x_range[0] <= cell[0] <= self.x_range[1] and self.y_range[0] <= cell[1] <= self.y_range[1]

    def in_jam(self, cell: Cell) -> bool:
        """Jam membership; cells off the grid are never jammed."""
        return self.contains(cell) and (cell[1] in self.jam_rows or cell[0] in self.jam_columns)

    def crosses(self, cell: Cell, direction: str) -> bool:
        """The move enters or leaves the jams."""
        return self.in_jam(cell) != self.in_jam(shift(cell, direction))

    def touches(self, cell: Cell, direction: str) -> bool:
        """The move starts in the jams or aims into them."""
        return self.in_jam(cell) or self.in_jam(shift(cell, direction))


SPARSE_TRAFFIC = TrafficGeometry(jam_rows=(6,), jam_columns=(5,), variant="sparse")
DENSE_TRAFFIC = TrafficGeometry(jam_rows=(1, 4, 7), jam_columns=(1, 4, 7, 10, 13), variant="dense")
