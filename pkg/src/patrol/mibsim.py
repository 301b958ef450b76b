"""Simulated managed device: an SNMP-like MIB driven by scripted time series.

Scalars and table cells are pure functions of the simulator clock, so a
scenario replays identically.  The clock is logical by default (tests call
tick); wall mode follows real time for live demos.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path


class _Marker:
    def __init__(self, name: str) -> None:
        self._name = name

    def __repr__(self) -> str:
        return self._name


NO_SUCH_OID = _Marker("NO_SUCH_OID")
END_OF_MIB = _Marker("END_OF_MIB")


class NoSuchTable(Exception):
    pass


class ScriptError(Exception):
    pass


def oid_key(oid: str) -> tuple[int, ...]:
    parts = oid.split(".")
    try:
        key = tuple(int(p) for p in parts)
    except ValueError:
        raise ScriptError(f"bad OID {oid!r}: components must be integers") from None
    if any(p < 0 for p in key) or not key:
        raise ScriptError(f"bad OID {oid!r}")
    return key


@dataclass(frozen=True)
class ScriptedSeries:
    """CONSTANT(v) | LINEAR(start, slope/s) | STEP(t_step, before, after)."""

    mode: str
    params: tuple

    def value_at(self, t: float):
        if self.mode == "constant":
            return self.params[0]
        if self.mode == "linear":
            start, slope = self.params
            return int(start + slope * t)
        t_step, before, after = self.params
        return after if t >= t_step else before

    @classmethod
    def parse(cls, spec: str) -> "ScriptedSeries":
        parts = spec.split(":")
        mode = parts[0]
        if mode in ("constant", "const"):
            if len(parts) != 2:
                raise ScriptError(f"constant needs one value: {spec!r}")
            return cls("constant", (_atom(parts[1]),))
        if mode in ("linear", "lin"):
            if len(parts) != 3:
                raise ScriptError(f"linear needs start and slope: {spec!r}")
            return cls("linear", (float(parts[1]), float(parts[2])))
        if mode == "step":
            if len(parts) != 4:
                raise ScriptError(f"step needs t, before, after: {spec!r}")
            return cls("step", (float(parts[1]), _atom(parts[2]), _atom(parts[3])))
        if mode == "str":
            return cls("constant", (":".join(parts[1:]),))
        raise ScriptError(f"unknown series mode {mode!r}")


def _atom(token: str):
    try:
        return int(token)
    except ValueError:
        return token


class Mib:
    def __init__(self, wall_clock: bool = False) -> None:
        self._scalars: dict[tuple[int, ...], tuple[str, ScriptedSeries]] = {}
        self._tables: dict[str, list[list[ScriptedSeries]]] = {}
        self._order: list[tuple[int, ...]] | None = None
        self._clock = 0.0
        self._wall = wall_clock
        self._t0 = time.monotonic()

    @property
    def clock(self) -> float:
        if self._wall:
            return time.monotonic() - self._t0
        return self._clock

    def tick(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("tick must be non-negative")
        self._clock += seconds

    def add_scalar(self, oid: str, series: ScriptedSeries) -> None:
        self._scalars[oid_key(oid)] = (oid, series)
        self._order = None

    def add_table(self, table_oid: str, rows: list[list[ScriptedSeries]]) -> None:
        self._tables[table_oid] = rows

    def get(self, oid: str):
        try:
            entry = self._scalars.get(oid_key(oid))
        except ScriptError:
            return NO_SUCH_OID
        if entry is None:
            return NO_SUCH_OID
        return entry[1].value_at(self.clock)

    def get_next(self, oid: str):
        """Next scalar in numeric OID order, or END_OF_MIB past the last one."""
        if self._order is None:
            self._order = sorted(self._scalars)
        try:
            key = oid_key(oid)
        except ScriptError:
            key = ()
        for candidate in self._order:
            if candidate > key:
                name, series = self._scalars[candidate]
                return name, series.value_at(self.clock)
        return END_OF_MIB

    def walk(self) -> list[tuple[str, object]]:
        out = []
        cursor = "0"
        while True:
            nxt = self.get_next(cursor)
            if nxt is END_OF_MIB:
                return out
            out.append(nxt)
            cursor = nxt[0]

    def get_table(self, table_oid: str) -> list[list]:
        rows = self._tables.get(table_oid)
        if rows is None:
            raise NoSuchTable(table_oid)
        t = self.clock
        return [[cell.value_at(t) for cell in row] for row in rows]

    def table_oids(self) -> list[str]:
        return sorted(self._tables)


def parse_script(text: str, wall_clock: bool = False) -> Mib:
    """Script format, one entry per line:

        <oid> <mode>[:<params...>]          scalar
        table <oid>                         table header
        row <cell> <cell> ...               one row of the open table

    where a cell/mode is constant:<v>, linear:<start>:<slope>,
    step:<t>:<before>:<after>, or str:<text>.  '#' starts a comment.
    """
    mib = Mib(wall_clock=wall_clock)
    open_table: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "table":
                if len(parts) != 2:
                    raise ScriptError("table header needs exactly one OID")
                open_table = parts[1]
                mib.add_table(open_table, [])
            elif parts[0] == "row":
                if open_table is None:
                    raise ScriptError("row outside a table")
                cells = [ScriptedSeries.parse(tok) for tok in parts[1:]]
                mib._tables[open_table].append(cells)
            else:
                if len(parts) != 2:
                    raise ScriptError("scalar line is '<oid> <series>'")
                open_table = None
                oid_key(parts[0])
                mib.add_scalar(parts[0], ScriptedSeries.parse(parts[1]))
        except ScriptError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from None
    return mib


def load_script(path: str | Path, wall_clock: bool = False) -> Mib:
    return parse_script(Path(path).read_text(), wall_clock=wall_clock)
