"""MATPOWER case ingestion.

Reads the ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen`` and ``mpc.branch`` blocks
of a MATPOWER ``.m`` file into an immutable :class:`CaseData` with every power
quantity in per unit.  Other blocks (``gencost``, ``areas``...) are skipped.

A canonical JSON form mirrors the dataclass field names one to one.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

BUS_TYPES = {3: "slack", 2: "pv", 1: "pq"}

# minimum column counts per block (MATPOWER 1-based: bus Vm is col 8, gen Vg col 6, branch x col 4)
_MIN_COLS = {"bus": 8, "gen": 6, "branch": 4}


class CaseError(ValueError):
    """Base class for case parsing and validation failures."""


class CaseSyntaxError(CaseError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class DuplicateBusError(CaseError):
    pass


class SlackBusError(CaseError):
    pass


class UnknownBusError(CaseError):
    pass


class InvalidCaseError(CaseError):
    pass


@dataclass(frozen=True)
class BusRecord:
    id: int
    bus_type: str
    p_demand: float
    q_demand: float
    shunt_gs: float
    shunt_bs: float
    v_set: float


@dataclass(frozen=True)
class GenRecord:
    bus: int
    p_gen: float
    q_gen: float
    v_set: float


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    tap: float = 1.0
    shift: float = 0.0
    status: str = "on"


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: tuple[BusRecord, ...]
    gens: tuple[GenRecord, ...]
    branches: tuple[BranchRecord, ...]

    def __post_init__(self):
        validate(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        """Map external bus id to its 0-based position."""
        return {bus.id: k for k, bus in enumerate(self.buses)}

    def type_counts(self) -> dict[str, int]:
        counts = {"slack": 0, "pv": 0, "pq": 0}
        for bus in self.buses:
            counts[bus.bus_type] += 1
        return counts


def validate(case: CaseData) -> None:
    if not (case.base_mva > 0 and math.isfinite(case.base_mva)):
        raise InvalidCaseError(f"base_mva must be positive, got {case.base_mva}")
    if len(case.buses) == 0:
        raise InvalidCaseError("case has no buses")
    seen = set()
    for bus in case.buses:
        if bus.id in seen:
            raise DuplicateBusError(f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if bus.bus_type not in ("slack", "pv", "pq"):
            raise InvalidCaseError(f"bus {bus.id}: unknown bus type {bus.bus_type!r}")
        if bus.bus_type in ("slack", "pv") and not bus.v_set > 0:
            raise InvalidCaseError(f"bus {bus.id}: voltage setpoint must be positive")
    n_slack = sum(bus.bus_type == "slack" for bus in case.buses)
    if n_slack != 1:
        raise SlackBusError(f"expected exactly one slack bus, found {n_slack}")
    for gen in case.gens:
        if gen.bus not in seen:
            raise UnknownBusError(f"generator references unknown bus {gen.bus}")
        if not math.isfinite(gen.p_gen):
            raise InvalidCaseError(f"generator at bus {gen.bus}: non-finite p_gen")
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise UnknownBusError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        if br.status == "on" and br.r == 0 and br.x == 0:
            raise InvalidCaseError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        if not br.tap > 0:
            raise InvalidCaseError(f"branch {br.from_bus}-{br.to_bus} has non-positive tap {br.tap}")


_BLOCK_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[]+?)\s*;?\s*$")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_blocks(text: str) -> tuple[dict[str, float], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, float] = {}
    blocks: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    start_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if current is None:
            m = _BLOCK_START.match(line)
            if m:
                current, start_line = m.group(1), lineno
                blocks[current] = []
                line = m.group(2)
            else:
                m = _SCALAR.match(line)
                if m:
                    try:
                        scalars[m.group(1)] = float(m.group(2))
                    except ValueError:
                        pass  # string-valued fields such as mpc.version
                continue
        closed = "]" in line
        body = line.split("]", 1)[0] if closed else line
        for chunk in body.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            try:
                row = [float(tok) for tok in tokens]
            except ValueError as exc:
                raise CaseSyntaxError(f"non-numeric entry in mpc.{current}: {exc}", lineno) from None
            blocks[current].append((lineno, row))
        if closed:
            current = None
    if current is not None:
        raise CaseSyntaxError(f"mpc.{current} block opened here is never closed", start_line)
    return scalars, blocks


def parse_case(text: str) -> CaseData:
    """Parse MATPOWER case text into per-unit :class:`CaseData`."""
    scalars, blocks = _read_blocks(text)
    if "baseMVA" not in scalars:
        raise CaseSyntaxError("missing mpc.baseMVA")
    base = scalars["baseMVA"]
    for name in ("bus", "gen", "branch"):
        blocks.setdefault(name, [])
        for lineno, row in blocks[name]:
            if len(row) < _MIN_COLS[name]:
                raise CaseSyntaxError(f"mpc.{name} row has {len(row)} columns, need {_MIN_COLS[name]}", lineno)
    if not blocks["bus"]:
        raise CaseSyntaxError("missing or empty mpc.bus block")

    gen_rows: dict[int, list[list[float]]] = {}
    for lineno, row in blocks["gen"]:
        status = row[7] if len(row) > 7 else 1.0
        if status > 0:
            gen_rows.setdefault(int(row[0]), []).append(row)

    buses = []
    for lineno, row in blocks["bus"]:
        code = int(row[1])
        if code not in BUS_TYPES:
            raise CaseSyntaxError(f"bus {int(row[0])}: unsupported bus type code {code}", lineno)
        bus_id = int(row[0])
        v_set = gen_rows[bus_id][0][5] if bus_id in gen_rows else row[7]
        buses.append(BusRecord(
            id=bus_id, bus_type=BUS_TYPES[code],
            p_demand=row[2] / base, q_demand=row[3] / base,
            shunt_gs=row[4] / base, shunt_bs=row[5] / base,
            v_set=v_set,
        ))

    gens = []
    for bus_id, rows in gen_rows.items():
        gens.append(GenRecord(
            bus=bus_id,
            p_gen=sum(r[1] for r in rows) / base,
            q_gen=sum(r[2] for r in rows) / base,
            v_set=rows[0][5],
        ))

    branches = []
    for lineno, row in blocks["branch"]:
        status = row[10] if len(row) > 10 else 1.0
        if status <= 0:
            continue
        row = row + [0.0] * (10 - len(row))
        ratio = row[8]
        branches.append(BranchRecord(
            from_bus=int(row[0]), to_bus=int(row[1]),
            r=row[2], x=row[3], b_charge=row[4],
            tap=ratio if ratio != 0 else 1.0,
            shift=math.radians(row[9]),
            status="on",
        ))
    return CaseData(base_mva=base, buses=tuple(buses), gens=tuple(gens), branches=tuple(branches))


def load_case(path: str | Path) -> CaseData:
    """Load a case from a ``.m`` or ``.json`` file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return json_to_case(text)
    return parse_case(text)


def builtin_case(name: str = "case14") -> CaseData:
    """One of the cases bundled with the package (currently ``case14``)."""
    text = resources.files("qpflow.data").joinpath(f"{name}.m").read_text(encoding="utf-8")
    return parse_case(text)


def case_to_json(case: CaseData, indent: int | None = 2) -> str:
    return json.dumps(asdict(case), indent=indent)


def json_to_case(text: str) -> CaseData:
    try:
        doc = json.loads(text)
        return CaseData(
            base_mva=float(doc["base_mva"]),
            buses=tuple(BusRecord(**b) for b in doc["buses"]),
            gens=tuple(GenRecord(**g) for g in doc["gens"]),
            branches=tuple(BranchRecord(**br) for br in doc["branches"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CaseSyntaxError(f"malformed case document: {exc}") from None
