"""Grid model for a radial MV/LV feeder: buses, lines, transformers, loads, DERs.

Grid-file schema (see configfile for the line grammar): one section per
element class, one row per element.

  [grid]
  base_mva = 1.0
  meshed = false            # optional, defaults to false

  [bus]
  <id>  nominal_kv=<kV>  type=<slack|pq>  [vm_pu=<pu>]

  [line]
  <id>  from=<bus> to=<bus> r_ohm=<ohm> x_ohm=<ohm> max_i_ka=<kA> [status=<closed|open>]

  [trafo]
  <id>  hv_bus=<bus> lv_bus=<bus> s_rated_kva=<kVA> vk_percent=<%> vkr_percent=<%> [tap_position=<int>]

  [load]
  <id>  bus=<bus> p_kw=<kW> q_kvar=<kvar>

  [sgen]
  <id>  bus=<bus> p_kw=<kW> q_kvar=<kvar>
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..configfile import (
    ConfigError,
    Row,
    as_bool,
    as_float,
    as_int,
    parse_config,
    sections_of,
    single_section,
)

ParseError = ConfigError

TAP_STEP_PERCENT = 2.5  # voltage ratio change per transformer tap position


class ValidationError(Exception):
    """Grid model violates a structural invariant; `kind` names which one."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


NO_SLACK = "NoSlack"
MULTIPLE_SLACK = "MultipleSlack"
DISCONNECTED = "Disconnected"
NON_POSITIVE_IMPEDANCE = "NonPositiveImpedance"
NOT_RADIAL = "NotRadial"
DUPLICATE_ID = "DuplicateId"
UNKNOWN_BUS = "UnknownBus"
VOLTAGE_MISMATCH = "VoltageMismatch"


@dataclass(frozen=True)
class Bus:
    id: str
    nominal_kv: float
    type: str  # "slack" | "pq"
    vm_setpoint_pu: float = 1.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    r_ohm: float
    x_ohm: float
    max_i_ka: float
    in_service: bool = True


@dataclass(frozen=True)
class Trafo:
    id: str
    hv_bus: str
    lv_bus: str
    s_rated_kva: float
    vk_percent: float
    vkr_percent: float
    tap_position: int = 0

    @property
    def tap_ratio(self) -> float:
        return 1.0 + self.tap_position * TAP_STEP_PERCENT / 100.0


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    p_kw: float
    q_kvar: float


@dataclass(frozen=True)
class Sgen:
    id: str
    bus: str
    p_kw: float
    q_kvar: float


@dataclass
class GridModel:
    buses: list[Bus]
    lines: list[Line]
    trafos: list[Trafo]
    loads: list[Load]
    sgens: list[Sgen]
    base_mva: float = 1.0
    meshed: bool = False

    bus_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.bus_index = {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.type == "slack")

    @property
    def radial(self) -> bool:
        return self.branch_count == len(self.buses) - 1

    @property
    def branch_count(self) -> int:
        return len(self.lines) + len(self.trafos)

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def element(self, kind: str, elem_id: str):
        pools = {
            "bus": self.buses,
            "line": self.lines,
            "trafo": self.trafos,
            "load": self.loads,
            "sgen": self.sgens,
        }
        if kind not in pools:
            return None
        for elem in pools[kind]:
            if elem.id == elem_id:
                return elem
        return None

    def with_line_status(self, statuses: dict[str, bool]) -> "GridModel":
        """Copy of the model with the given lines switched in or out."""
        lines = [
            replace(line, in_service=statuses.get(line.id, line.in_service))
            for line in self.lines
        ]
        return GridModel(
            buses=self.buses,
            lines=lines,
            trafos=self.trafos,
            loads=self.loads,
            sgens=self.sgens,
            base_mva=self.base_mva,
            meshed=self.meshed,
        )


def _check_unique(ids, what: str):
    seen = set()
    for elem_id in ids:
        if elem_id in seen:
            raise ValidationError(DUPLICATE_ID, f"duplicate {what} id '{elem_id}'")
        seen.add(elem_id)


def validate(model: GridModel) -> None:
    _check_unique((b.id for b in model.buses), "bus")
    _check_unique(
        (e.id for e in model.lines + model.trafos + model.loads + model.sgens),
        "element",
    )
    slacks = [b for b in model.buses if b.type == "slack"]
    if not slacks:
        raise ValidationError(NO_SLACK, "grid needs exactly one slack bus")
    if len(slacks) > 1:
        raise ValidationError(MULTIPLE_SLACK, "grid needs exactly one slack bus")
    bus_ids = set(model.bus_index)
    for line in model.lines:
        if line.from_bus not in bus_ids or line.to_bus not in bus_ids:
            raise ValidationError(UNKNOWN_BUS, f"line '{line.id}' references unknown bus")
        if line.r_ohm <= 0 and line.x_ohm <= 0:
            raise ValidationError(
                NON_POSITIVE_IMPEDANCE, f"line '{line.id}' has no positive impedance"
            )
        if line.r_ohm < 0 or line.x_ohm < 0:
            raise ValidationError(
                NON_POSITIVE_IMPEDANCE, f"line '{line.id}' has a negative impedance term"
            )
        if model.bus(line.from_bus).nominal_kv != model.bus(line.to_bus).nominal_kv:
            raise ValidationError(
                VOLTAGE_MISMATCH,
                f"line '{line.id}' connects buses of different nominal voltage",
            )
    for trafo in model.trafos:
        if trafo.hv_bus not in bus_ids or trafo.lv_bus not in bus_ids:
            raise ValidationError(UNKNOWN_BUS, f"trafo '{trafo.id}' references unknown bus")
        if trafo.vk_percent <= 0 or trafo.s_rated_kva <= 0:
            raise ValidationError(
                NON_POSITIVE_IMPEDANCE, f"trafo '{trafo.id}' has non-positive vk or rating"
            )
        if trafo.vkr_percent < 0 or trafo.vkr_percent > trafo.vk_percent:
            raise ValidationError(
                NON_POSITIVE_IMPEDANCE, f"trafo '{trafo.id}' needs 0 <= vkr <= vk"
            )
    for elem in model.loads + model.sgens:
        if elem.bus not in bus_ids:
            raise ValidationError(UNKNOWN_BUS, f"'{elem.id}' references unknown bus")

    # Connectivity over all branches, regardless of switching state.
    adjacency: dict[str, list[str]] = {b.id: [] for b in model.buses}
    for line in model.lines:
        adjacency[line.from_bus].append(line.to_bus)
        adjacency[line.to_bus].append(line.from_bus)
    for trafo in model.trafos:
        adjacency[trafo.hv_bus].append(trafo.lv_bus)
        adjacency[trafo.lv_bus].append(trafo.hv_bus)
    seen = set()
    stack = [model.buses[0].id]
    while stack:
        bus_id = stack.pop()
        if bus_id in seen:
            continue
        seen.add(bus_id)
        stack.extend(adjacency[bus_id])
    if len(seen) != len(model.buses):
        missing = sorted(bus_ids - seen)
        raise ValidationError(DISCONNECTED, f"buses not connected to the grid: {missing}")
    if not model.meshed and model.branch_count != len(model.buses) - 1:
        raise ValidationError(
            NOT_RADIAL,
            f"{model.branch_count} branches for {len(model.buses)} buses; "
            "flag 'meshed = true' to allow loops",
        )


def _row_float(row: Row, key: str, source: str) -> float:
    return as_float(row.require(key, source), f"{row.id}.{key}", source, row.lineno)


def parse_grid(text: str, source: str = "<grid>") -> GridModel:
    sections = parse_config(text, source)
    head = single_section(sections, "grid", source)
    base_mva = 1.0
    meshed = False
    if head is not None:
        raw = head.get("base_mva")
        if raw is not None:
            base_mva = as_float(raw, "base_mva", source, head.lineno)
        raw = head.get("meshed")
        if raw is not None:
            meshed = as_bool(raw, "meshed", source, head.lineno)

    buses, lines, trafos, loads, sgens = [], [], [], [], []
    for section in sections_of(sections, "bus"):
        for row in section.rows:
            bus_type = row.require("type", source)
            if bus_type not in ("slack", "pq"):
                raise ConfigError(
                    f"bus '{row.id}': type must be slack or pq", source, row.lineno
                )
            buses.append(
                Bus(
                    id=row.id,
                    nominal_kv=_row_float(row, "nominal_kv", source),
                    type=bus_type,
                    vm_setpoint_pu=float(row.get("vm_pu", "1.0")),
                )
            )
    for section in sections_of(sections, "line"):
        for row in section.rows:
            lines.append(
                Line(
                    id=row.id,
                    from_bus=row.require("from", source),
                    to_bus=row.require("to", source),
                    r_ohm=_row_float(row, "r_ohm", source),
                    x_ohm=_row_float(row, "x_ohm", source),
                    max_i_ka=_row_float(row, "max_i_ka", source),
                    in_service=as_bool(
                        row.get("status", "closed"), "status", source, row.lineno
                    ),
                )
            )
    for section in sections_of(sections, "trafo"):
        for row in section.rows:
            trafos.append(
                Trafo(
                    id=row.id,
                    hv_bus=row.require("hv_bus", source),
                    lv_bus=row.require("lv_bus", source),
                    s_rated_kva=_row_float(row, "s_rated_kva", source),
                    vk_percent=_row_float(row, "vk_percent", source),
                    vkr_percent=_row_float(row, "vkr_percent", source),
                    tap_position=as_int(
                        row.get("tap_position", "0"), "tap_position", source, row.lineno
                    ),
                )
            )
    for kind, pool in (("load", loads), ("sgen", sgens)):
        cls = Load if kind == "load" else Sgen
        for section in sections_of(sections, kind):
            for row in section.rows:
                pool.append(
                    cls(
                        id=row.id,
                        bus=row.require("bus", source),
                        p_kw=_row_float(row, "p_kw", source),
                        q_kvar=_row_float(row, "q_kvar", source),
                    )
                )
    model = GridModel(
        buses=buses,
        lines=lines,
        trafos=trafos,
        loads=loads,
        sgens=sgens,
        base_mva=base_mva,
        meshed=meshed,
    )
    validate(model)
    return model


def load_grid(path) -> GridModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grid(fh.read(), source=str(path))
