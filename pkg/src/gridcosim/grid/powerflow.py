"""Newton-Raphson AC power flow in polar per-unit coordinates.

Constant-PQ injections, flat start, tolerance 1e-8 pu on the largest P/Q
mismatch, at most 20 iterations. Buses cut off from the slack by open
switches are reported as islanded (de-energized) rather than solved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import GridModel

TOLERANCE_PU = 1e-8
MAX_ITERATIONS = 20


class PowerFlowError(Exception):
    pass


class UnknownElement(PowerFlowError):
    pass


class UnconvergedSolution(PowerFlowError):
    pass


@dataclass(frozen=True)
class BranchFlow:
    p_from_kw: float
    q_from_kvar: float
    p_to_kw: float
    q_to_kvar: float
    i_ka: float
    loading_percent: float


@dataclass(frozen=True)
class Measurement:
    p_kw: float
    q_kvar: float
    v_pu: float
    i_ka: float
    loading_percent: float
    t: int | None = None

    def value(self, fieldname: str) -> float:
        mapping = {
            "p_kw": self.p_kw,
            "q_kvar": self.q_kvar,
            "p_from_kw": self.p_kw,
            "q_from_kvar": self.q_kvar,
            "v_pu": self.v_pu,
            "i_ka": self.i_ka,
            "loading_percent": self.loading_percent,
        }
        if fieldname not in mapping:
            raise UnknownElement(f"no measurable field '{fieldname}'")
        return mapping[fieldname]


@dataclass
class PowerFlowSolution:
    converged: bool
    iterations: int
    max_mismatch_pu: float
    vm_pu: dict[str, float]
    va_rad: dict[str, float]
    branch_flows: dict[tuple[str, str], BranchFlow]  # (kind, id) -> flow
    injections_kw: dict[str, tuple[float, float]]    # applied per-bus (p_kw, q_kvar)
    slack_p_kw: float
    slack_q_kvar: float
    islanded_buses: list[str] = field(default_factory=list)
    losses_kw: float = 0.0
    losses_kvar: float = 0.0


def _energized_buses(model: GridModel) -> set[str]:
    adjacency: dict[str, list[str]] = {b.id: [] for b in model.buses}
    for line in model.lines:
        if line.in_service:
            adjacency[line.from_bus].append(line.to_bus)
            adjacency[line.to_bus].append(line.from_bus)
    for trafo in model.trafos:
        adjacency[trafo.hv_bus].append(trafo.lv_bus)
        adjacency[trafo.lv_bus].append(trafo.hv_bus)
    seen: set[str] = set()
    stack = [model.slack_bus.id]
    while stack:
        bus_id = stack.pop()
        if bus_id in seen:
            continue
        seen.add(bus_id)
        stack.extend(adjacency[bus_id])
    return seen


def _branch_admittances(model: GridModel, energized: set[str]):
    """Per-unit series admittance and tap ratio for every conducting branch."""
    branches = []
    for line in model.lines:
        if not line.in_service:
            continue
        if line.from_bus not in energized or line.to_bus not in energized:
            continue
        kv = model.bus(line.from_bus).nominal_kv
        z_base = kv * kv / model.base_mva
        z = complex(line.r_ohm, line.x_ohm) / z_base
        branches.append(("line", line.id, line.from_bus, line.to_bus, 1.0 / z, 1.0))
    for trafo in model.trafos:
        if trafo.hv_bus not in energized or trafo.lv_bus not in energized:
            continue
        s_rated_mva = trafo.s_rated_kva / 1000.0
        xk = math.sqrt(trafo.vk_percent**2 - trafo.vkr_percent**2)
        z = complex(trafo.vkr_percent / 100.0, xk / 100.0) * (
            model.base_mva / s_rated_mva
        )
        branches.append(
            ("trafo", trafo.id, trafo.hv_bus, trafo.lv_bus, 1.0 / z, trafo.tap_ratio)
        )
    return branches


def run_power_flow(
    model: GridModel,
    injections: Mapping[str, tuple[float, float]] | None = None,
    line_status: Mapping[str, bool] | None = None,
) -> PowerFlowSolution:
    """Solve the AC power flow for per-bus net injections in kW/kvar.

    `injections` maps bus id to net (p_kw, q_kvar), generation positive;
    non-slack buses default to zero injection. `line_status` switches lines
    in or out for this solve without touching the model.
    """
    if line_status:
        model = model.with_line_status(dict(line_status))
    injections = dict(injections or {})
    for bus_id in injections:
        if bus_id not in model.bus_index:
            raise UnknownElement(f"injection references unknown bus '{bus_id}'")

    energized = _energized_buses(model)
    islanded = sorted(set(model.bus_index) - energized)
    solve_buses = [b for b in model.buses if b.id in energized]
    slack_id = model.slack_bus.id
    pq_buses = [b.id for b in solve_buses if b.id != slack_id]
    index = {bus_id: i for i, bus_id in enumerate([slack_id] + pq_buses)}
    n = len(index)

    ybus = np.zeros((n, n), dtype=complex)
    branches = _branch_admittances(model, energized)
    for _kind, _bid, from_bus, to_bus, y, tap in branches:
        i, j = index[from_bus], index[to_bus]
        ybus[i, i] += y / (tap * tap)
        ybus[j, j] += y
        ybus[i, j] -= y / tap
        ybus[j, i] -= y / tap

    base_kw = model.base_mva * 1000.0
    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for bus_id, (p_kw, q_kvar) in injections.items():
        if bus_id in index and bus_id != slack_id:
            p_spec[index[bus_id]] = p_kw / base_kw
            q_spec[index[bus_id]] = q_kvar / base_kw

    vm = np.ones(n)
    vm[0] = model.slack_bus.vm_setpoint_pu
    va = np.zeros(n)
    g, b = ybus.real, ybus.imag

    def calc_pq():
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        return s.real, s.imag

    converged = False
    iterations = 0
    max_mismatch = math.inf
    pq = list(range(1, n))
    for iteration in range(1, MAX_ITERATIONS + 1):
        iterations = iteration
        p_calc, q_calc = calc_pq()
        dp = p_spec[pq] - p_calc[pq]
        dq = q_spec[pq] - q_calc[pq]
        max_mismatch = max(
            (np.max(np.abs(dp)) if len(dp) else 0.0),
            (np.max(np.abs(dq)) if len(dq) else 0.0),
        )
        if max_mismatch < TOLERANCE_PU:
            converged = True
            break
        if n == 1:
            converged = True
            break
        # Jacobian blocks over PQ buses: [dP/dθ dP/dV; dQ/dθ dQ/dV]
        npq = n - 1
        h = np.zeros((npq, npq))
        nmat = np.zeros((npq, npq))
        m = np.zeros((npq, npq))
        lmat = np.zeros((npq, npq))
        for a, i in enumerate(pq):
            for c, j in enumerate(pq):
                if i == j:
                    h[a, c] = -q_calc[i] - b[i, i] * vm[i] ** 2
                    nmat[a, c] = p_calc[i] / vm[i] + g[i, i] * vm[i]
                    m[a, c] = p_calc[i] - g[i, i] * vm[i] ** 2
                    lmat[a, c] = q_calc[i] / vm[i] - b[i, i] * vm[i]
                else:
                    dth = va[i] - va[j]
                    gij, bij = g[i, j], b[i, j]
                    h[a, c] = vm[i] * vm[j] * (gij * math.sin(dth) - bij * math.cos(dth))
                    nmat[a, c] = vm[i] * (gij * math.cos(dth) + bij * math.sin(dth))
                    m[a, c] = -vm[i] * vm[j] * (gij * math.cos(dth) + bij * math.sin(dth))
                    lmat[a, c] = vm[i] * (gij * math.sin(dth) - bij * math.cos(dth))
        jac = np.block([[h, nmat], [m, lmat]])
        try:
            dx = np.linalg.solve(jac, np.concatenate([dp, dq]))
        except np.linalg.LinAlgError:
            break
        va[pq] += dx[:npq]
        vm[pq] += dx[npq:]

    v = vm * np.exp(1j * va)
    vm_pu = {bus_id: 0.0 for bus_id in islanded}
    va_rad = {bus_id: 0.0 for bus_id in islanded}
    for bus_id, i in index.items():
        vm_pu[bus_id] = float(vm[i])
        va_rad[bus_id] = float(va[i])

    branch_flows: dict[tuple[str, str], BranchFlow] = {}
    loss = 0.0 + 0.0j
    for kind, bid, from_bus, to_bus, y, tap in branches:
        vf, vt = v[index[from_bus]], v[index[to_bus]]
        i_from = (y / tap) * (vf / tap - vt)
        i_to = y * (vt - vf / tap)
        s_from = vf * np.conj(i_from)
        s_to = vt * np.conj(i_to)
        loss += s_from + s_to
        kv_from = model.bus(from_bus).nominal_kv
        i_base_ka = model.base_mva / (math.sqrt(3.0) * kv_from)
        i_ka = float(abs(i_from)) * i_base_ka
        if kind == "line":
            limit = model.element("line", bid).max_i_ka
            loading = 100.0 * i_ka / limit if limit > 0 else 0.0
        else:
            s_rated_mva = model.element("trafo", bid).s_rated_kva / 1000.0
            s_from_mva = float(abs(s_from)) * model.base_mva
            loading = 100.0 * s_from_mva / s_rated_mva
        branch_flows[(kind, bid)] = BranchFlow(
            p_from_kw=float(s_from.real) * base_kw,
            q_from_kvar=float(s_from.imag) * base_kw,
            p_to_kw=float(s_to.real) * base_kw,
            q_to_kvar=float(s_to.imag) * base_kw,
            i_ka=i_ka,
            loading_percent=loading,
        )
    for line in model.lines:
        if ("line", line.id) not in branch_flows:
            branch_flows[("line", line.id)] = BranchFlow(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    for trafo in model.trafos:
        if ("trafo", trafo.id) not in branch_flows:
            branch_flows[("trafo", trafo.id)] = BranchFlow(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    s_slack = v[0] * np.conj(ybus[0] @ v) if n else 0.0
    applied = {
        bus_id: injections.get(bus_id, (0.0, 0.0))
        for bus_id in model.bus_index
        if bus_id in energized and bus_id != slack_id
    }
    return PowerFlowSolution(
        converged=converged,
        iterations=iterations,
        max_mismatch_pu=float(max_mismatch),
        vm_pu=vm_pu,
        va_rad=va_rad,
        branch_flows=branch_flows,
        injections_kw=applied,
        slack_p_kw=float(np.real(s_slack)) * base_kw,
        slack_q_kvar=float(np.imag(s_slack)) * base_kw,
        islanded_buses=islanded,
        losses_kw=float(loss.real) * base_kw,
        losses_kvar=float(loss.imag) * base_kw,
    )


def measurements_at(
    model: GridModel,
    solution: PowerFlowSolution,
    kind: str,
    elem_id: str,
    element_values: Mapping[tuple[str, str], tuple[float, float]] | None = None,
    t: int | None = None,
) -> Measurement:
    """Engineering-unit measurement for one element of a converged solution."""
    if not solution.converged:
        raise UnconvergedSolution("cannot take measurements from a non-converged solution")
    element = model.element(kind, elem_id)
    if element is None:
        raise UnknownElement(f"no {kind} '{elem_id}' in the model")
    if kind == "bus":
        if elem_id == model.slack_bus.id:
            p, q = solution.slack_p_kw, solution.slack_q_kvar
        else:
            p, q = solution.injections_kw.get(elem_id, (0.0, 0.0))
        return Measurement(
            p_kw=p,
            q_kvar=q,
            v_pu=solution.vm_pu[elem_id],
            i_ka=0.0,
            loading_percent=0.0,
            t=t,
        )
    if kind in ("line", "trafo"):
        flow = solution.branch_flows[(kind, elem_id)]
        from_bus = element.from_bus if kind == "line" else element.hv_bus
        return Measurement(
            p_kw=flow.p_from_kw,
            q_kvar=flow.q_from_kvar,
            v_pu=solution.vm_pu[from_bus],
            i_ka=flow.i_ka,
            loading_percent=flow.loading_percent,
            t=t,
        )
    # load / sgen: element-level applied values, bus voltage
    values = dict(element_values or {})
    p, q = values.get((kind, elem_id), (element.p_kw, element.q_kvar))
    return Measurement(
        p_kw=p,
        q_kvar=q,
        v_pu=solution.vm_pu[element.bus],
        i_ka=0.0,
        loading_percent=0.0,
        t=t,
    )
