"""Scenario loading and end-to-end runs: one declarative file wires the grid,
the emulated network, field devices, the attacker and EMS units into the
kernel, and every run flushes a reproducible artifact set (PCAP, CSVs,
transcript, report, manifest).

Scenario file schema:

  [scenario]
  name = <token>
  horizon_s = <int>
  step_s = <int>
  seed = <int>
  grid_file = <path>
  topology_file = <path>
  profiles_file = <path>          # optional

  [mtu]
  host = <topology host>
  poll_period_s = <int>           # optional; 0 = spontaneous reporting only

  [rtu <name>]
  host = <topology host>
  common_address = <int>
  report_period_s = <int>
  datapoint = <ioa> <monitor|control> <kind>:<element>:<field> [scale=<f>] [unit=<text>]

  [ved <name>]
  host = <topology host>
  bus = <grid bus>
  battery = capacity_kwh=<f> p_max_kw=<f> eta_charge=<f> eta_discharge=<f> soc_kwh=<f>

  [ems <ved-name>]
  dso = import=<kW> export=<kW> [from=<s>] [to=<s>]
  vpp = target=<kW> [from=<s>] [to=<s>]

  [attack]
  foothold = <topology host>
  start_time_s = <int>
  stage = scan <subnet>
  stage = rce <selector>
  stage = pe <suid|sudoers>
  stage = manipulate <scale|offset|freeze|fdi_stealth> [factor=<f>] [delta=<f>] [targets=all|<ioa,..>]
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from . import attacker as attacker_mod
from . import devices, ems, netsim
from .configfile import ConfigError, as_int, parse_config, sections_of, single_section
from .grid import (
    GridModel,
    ProfileSet,
    bus_injections,
    element_values_at,
    load_grid,
    load_profiles,
    measurements_at,
    run_power_flow,
)
from .kernel import Kernel, SimulatorDescriptor, SimulatorFault

ParseError = ConfigError

GROUND_TRUTH_CSV = "ground_truth.csv"
ARCHIVE_CSV = "archive.csv"
COMMANDS_CSV = "commands.csv"
ATTACK_TRACE_CSV = "attack_trace.csv"
ATTACK_TRANSCRIPT = "attack_transcript.log"
EMS_DECISIONS_CSV = "ems_decisions.csv"
PCAP_FILE = "capture.pcap"
RUN_REPORT = "run_report.txt"
MANIFEST = "manifest.txt"

# run_report.txt carries wall-clock timing, so it is listed but never hashed
HASHED_OUTPUTS = (
    PCAP_FILE,
    GROUND_TRUTH_CSV,
    ARCHIVE_CSV,
    COMMANDS_CSV,
    ATTACK_TRACE_CSV,
    ATTACK_TRANSCRIPT,
    EMS_DECISIONS_CSV,
)

_MONITORABLE = {
    "bus": {"p_kw", "q_kvar", "v_pu"},
    "line": {"p_kw", "q_kvar", "p_from_kw", "q_from_kvar", "v_pu", "i_ka", "loading_percent"},
    "trafo": {"p_kw", "q_kvar", "p_from_kw", "q_from_kvar", "v_pu", "i_ka", "loading_percent"},
    "load": {"p_kw", "q_kvar", "v_pu"},
    "sgen": {"p_kw", "q_kvar", "v_pu"},
}
_CONTROLLABLE = {
    "line": {"status"},
    "load": {"p_kw", "q_kvar"},
    "sgen": {"p_kw", "q_kvar"},
}


class ScenarioError(Exception):
    pass


class DanglingReference(ScenarioError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"dangling reference '{name}': {detail}")
        self.name = name


@dataclass
class MtuConfig:
    host: str
    poll_period: int = 0


@dataclass
class VedConfig:
    name: str
    host: str
    bus: str
    battery: ems.Battery | None = None


@dataclass
class EmsConfig:
    ved: str
    dso_limits: tuple[ems.DsoLimit, ...] = ()
    vpp_schedules: tuple[ems.VppSchedule, ...] = ()


@dataclass
class Scenario:
    name: str
    horizon_s: int
    step_s: int
    seed: int
    grid_file: str
    topology_file: str
    profiles_file: str | None
    mtu: MtuConfig | None
    rtus: list[devices.RtuConfig]
    veds: list[VedConfig]
    ems_configs: dict[str, EmsConfig]
    attack_plan: attacker_mod.AttackPlan | None
    outdir: str
    grid_model: GridModel = field(repr=False, default=None)
    profiles: ProfileSet | None = field(repr=False, default=None)

    def without_attack(self) -> "Scenario":
        copy = Scenario(**{**self.__dict__})
        copy.attack_plan = None
        return copy


def _parse_datapoint(value: str, source: str, lineno: int) -> devices.DataPoint:
    tokens = value.split()
    if len(tokens) < 3:
        raise ConfigError(
            "datapoint = <ioa> <monitor|control> <kind>:<element>:<field> ...",
            source, lineno,
        )
    ref = tokens[2].split(":")
    if len(ref) != 3:
        raise ConfigError(f"bad element reference '{tokens[2]}'", source, lineno)
    opts = dict(tok.split("=", 1) for tok in tokens[3:] if "=" in tok)
    return devices.DataPoint(
        ioa=as_int(tokens[0], "ioa", source, lineno),
        direction=tokens[1],
        element_kind=ref[0],
        element_id=ref[1],
        fieldname=ref[2],
        scale=float(opts.get("scale", "1.0")),
        unit=opts.get("unit", ""),
    )


def _parse_stage(value: str, source: str, lineno: int):
    tokens = value.split()
    if not tokens:
        raise ConfigError("empty attack stage", source, lineno)
    kind = tokens[0]
    if kind == "scan":
        return attacker_mod.ScanStage(subnet=tokens[1])
    if kind == "rce":
        return attacker_mod.RceStage(selector=tokens[1])
    if kind == "pe":
        return attacker_mod.PeStage(method=tokens[1])
    if kind == "manipulate":
        opts = dict(tok.split("=", 1) for tok in tokens[2:] if "=" in tok)
        targets_raw = opts.get("targets", "all")
        targets = (
            None
            if targets_raw == "all"
            else tuple(int(part) for part in targets_raw.split(","))
        )
        strategy = attacker_mod.ManipulationStrategy(
            kind=tokens[1],
            factor=float(opts.get("factor", "1.0")),
            delta=float(opts.get("delta", "0.0")),
            target_ioas=targets,
        )
        return attacker_mod.ManipulateStage(strategy=strategy)
    raise ConfigError(f"unknown stage kind '{kind}'", source, lineno)


def _parse_window_opts(value: str):
    opts = dict(tok.split("=", 1) for tok in value.split() if "=" in tok)
    start = int(opts.get("from", "0"))
    end = int(opts["to"]) if "to" in opts else None
    return opts, start, end


def load_scenario(path) -> Scenario:
    source = str(path)
    base_dir = os.path.dirname(os.path.abspath(source))
    with open(path, "r", encoding="utf-8") as fh:
        sections = parse_config(fh.read(), source)

    head = single_section(sections, "scenario", source)
    if head is None:
        raise ConfigError("missing [scenario] section", source, 1)

    def resolve(name: str) -> str:
        return os.path.join(base_dir, name)

    name = head.get("name", "scenario")
    horizon_s = as_int(head.require("horizon_s", source), "horizon_s", source, head.lineno)
    step_s = as_int(head.require("step_s", source), "step_s", source, head.lineno)
    seed = as_int(head.get("seed", "0"), "seed", source, head.lineno)
    grid_file = resolve(head.require("grid_file", source))
    topology_file = resolve(head.require("topology_file", source))
    profiles_raw = head.get("profiles_file")
    profiles_file = resolve(profiles_raw) if profiles_raw else None
    outdir = head.get("outdir", "out")
    if horizon_s <= 0 or step_s <= 0 or horizon_s % step_s:
        raise ConfigError("horizon_s must be a positive multiple of step_s", source, head.lineno)

    for file_path, what in ((grid_file, "grid_file"), (topology_file, "topology_file")):
        if not os.path.exists(file_path):
            raise DanglingReference(what, f"file not found: {file_path}")
    if profiles_file and not os.path.exists(profiles_file):
        raise DanglingReference("profiles_file", f"file not found: {profiles_file}")

    grid_model = load_grid(grid_file)
    network = netsim.load_topology(topology_file)
    profiles = load_profiles(profiles_file) if profiles_file else None

    mtu_section = single_section(sections, "mtu", source)
    mtu_config = None
    if mtu_section is not None:
        mtu_config = MtuConfig(
            host=mtu_section.require("host", source),
            poll_period=as_int(
                mtu_section.get("poll_period_s", "0"), "poll_period_s",
                source, mtu_section.lineno,
            ),
        )
        if mtu_config.host not in network.hosts:
            raise DanglingReference(mtu_config.host, "MTU host not in topology")

    rtus: list[devices.RtuConfig] = []
    for section in sections_of(sections, "rtu"):
        if not section.name:
            raise ConfigError("rtu section needs a name", source, section.lineno)
        points = [
            _parse_datapoint(value, source, section.lineno)
            for value in section.get_all("datapoint")
        ]
        config = devices.RtuConfig(
            name=section.name,
            host=section.require("host", source),
            common_address=as_int(
                section.require("common_address", source), "common_address",
                source, section.lineno,
            ),
            datapoints=devices.DataPointMap(entries=points),
            report_period=as_int(
                section.require("report_period_s", source), "report_period_s",
                source, section.lineno,
            ),
        )
        if config.report_period % step_s:
            raise ConfigError(
                f"rtu '{config.name}': report_period_s must be a multiple of step_s",
                source, section.lineno,
            )
        if config.host not in network.hosts:
            raise DanglingReference(config.host, f"rtu '{config.name}' host not in topology")
        if network.hosts[config.host].service_on(devices.IEC104_PORT) is None:
            raise DanglingReference(
                config.host, f"rtu '{config.name}' host lacks an iec104 service"
            )
        for dp in points:
            element = grid_model.element(dp.element_kind, dp.element_id)
            if element is None:
                raise DanglingReference(
                    f"{dp.element_kind}:{dp.element_id}",
                    f"rtu '{config.name}' IOA {dp.ioa} targets a missing grid element",
                )
            allowed = (_MONITORABLE if dp.direction == "monitor" else _CONTROLLABLE).get(
                dp.element_kind, set()
            )
            if dp.fieldname not in allowed:
                raise DanglingReference(
                    f"{dp.element_kind}:{dp.element_id}:{dp.fieldname}",
                    f"field not {'readable' if dp.direction == 'monitor' else 'actuatable'}",
                )
        rtus.append(config)
    if len({r.name for r in rtus}) != len(rtus):
        raise ConfigError("duplicate rtu name", source, 1)

    veds: list[VedConfig] = []
    for section in sections_of(sections, "ved"):
        if not section.name:
            raise ConfigError("ved section needs a name", source, section.lineno)
        battery = None
        battery_raw = section.get("battery")
        if battery_raw:
            opts = dict(tok.split("=", 1) for tok in battery_raw.split() if "=" in tok)
            try:
                battery = ems.Battery(
                    capacity_kwh=float(opts["capacity_kwh"]),
                    p_max_kw=float(opts["p_max_kw"]),
                    eta_charge=float(opts.get("eta_charge", "1.0")),
                    eta_discharge=float(opts.get("eta_discharge", "1.0")),
                    soc_kwh=float(opts.get("soc_kwh", "0.0")),
                )
            except KeyError as exc:
                raise ConfigError(f"battery entry missing {exc}", source, section.lineno) from None
        config = VedConfig(
            name=section.name,
            host=section.require("host", source),
            bus=section.require("bus", source),
            battery=battery,
        )
        if config.host not in network.hosts:
            raise DanglingReference(config.host, f"ved '{config.name}' host not in topology")
        if config.bus not in grid_model.bus_index:
            raise DanglingReference(config.bus, f"ved '{config.name}' bus not in grid")
        veds.append(config)

    ems_configs: dict[str, EmsConfig] = {}
    for section in sections_of(sections, "ems"):
        if not section.name:
            raise ConfigError("ems section needs a ved name", source, section.lineno)
        if section.name not in {v.name for v in veds}:
            raise DanglingReference(section.name, "ems section for unknown ved")
        dso_limits = []
        for value in section.get_all("dso"):
            opts, start, end = _parse_window_opts(value)
            dso_limits.append(
                ems.DsoLimit(
                    p_max_import_kw=float(opts["import"]),
                    p_max_export_kw=float(opts["export"]),
                    t_start=start, t_end=end,
                )
            )
        vpp_schedules = []
        for value in section.get_all("vpp"):
            opts, start, end = _parse_window_opts(value)
            vpp_schedules.append(
                ems.VppSchedule(target_p_kw=float(opts["target"]), t_start=start, t_end=end)
            )
        ems_configs[section.name] = EmsConfig(
            ved=section.name,
            dso_limits=tuple(dso_limits),
            vpp_schedules=tuple(vpp_schedules),
        )

    attack_section = single_section(sections, "attack", source)
    attack_plan = None
    if attack_section is not None:
        foothold = attack_section.require("foothold", source)
        if foothold not in network.hosts:
            raise DanglingReference(foothold, "attack foothold not in topology")
        stages = tuple(
            _parse_stage(value, source, attack_section.lineno)
            for value in attack_section.get_all("stage")
        )
        attack_plan = attacker_mod.AttackPlan(
            foothold=foothold,
            stages=stages,
            start_time=as_int(
                attack_section.get("start_time_s", "0"), "start_time_s",
                source, attack_section.lineno,
            ),
        )

    # profile targets must resolve against the grid or a ved load/pv channel
    if profiles is not None:
        ved_names = {v.name for v in veds}
        grid_targets = {
            (e.id, f)
            for e in grid_model.loads + grid_model.sgens
            for f in ("p_kw", "q_kvar")
        }
        for element_id, fieldname in profiles.profiles:
            if (element_id, fieldname) in grid_targets:
                continue
            if element_id in ved_names and fieldname in ("load_kw", "pv_kw"):
                continue
            raise DanglingReference(
                f"{element_id}.{fieldname}", "profile target matches no grid element or ved"
            )

    return Scenario(
        name=name, horizon_s=horizon_s, step_s=step_s, seed=seed,
        grid_file=grid_file, topology_file=topology_file, profiles_file=profiles_file,
        mtu=mtu_config, rtus=rtus, veds=veds, ems_configs=ems_configs,
        attack_plan=attack_plan, outdir=outdir,
        grid_model=grid_model, profiles=profiles,
    )


class GridSimulator:
    """Kernel adapter around the power-flow core; applies profiles, command
    overrides and VED exchanges, then publishes the monitored measurements."""

    def __init__(self, model: GridModel, profiles: ProfileSet | None,
                 monitored: list[tuple[str, str, str]],
                 controllable: list[tuple[str, str, str]],
                 ved_buses: dict[str, str]):
        self.model = model
        self.profiles = profiles
        self.monitored = monitored
        self.controllable = controllable
        self.ved_buses = ved_buses
        self.command_overrides: dict[tuple[str, str], float] = {}
        self.line_status: dict[str, bool] = {}
        self.last_solution = None

    def step(self, t: int, inputs: dict) -> dict:
        for kind, elem_id, fieldname in self.controllable:
            value = inputs.get((f"{kind}:{elem_id}", fieldname))
            if value is None:
                continue
            if kind == "line" and fieldname == "status":
                self.line_status[elem_id] = value >= 0.5
            else:
                self.command_overrides[(elem_id, fieldname)] = value
        element_values = element_values_at(
            self.model, self.profiles, t, self.command_overrides
        )
        extra = {}
        for ved_name, bus in self.ved_buses.items():
            exchange = inputs.get((f"ved:{ved_name}", "grid_kw"), 0.0) or 0.0
            p, q = extra.get(bus, (0.0, 0.0))
            extra[bus] = (p - exchange, q)  # import draws power from the bus
        injections = bus_injections(self.model, element_values, extra)
        solution = run_power_flow(self.model, injections, self.line_status)
        if not solution.converged:
            raise RuntimeError(
                f"power flow did not converge at t={t} "
                f"(mismatch {solution.max_mismatch_pu:.3e} pu)"
            )
        self.last_solution = solution
        outputs = {}
        for kind, elem_id, fieldname in self.monitored:
            m = measurements_at(self.model, solution, kind, elem_id,
                                element_values=element_values, t=t)
            outputs[(f"{kind}:{elem_id}", fieldname)] = m.value(fieldname)
        return outputs


class EmsSimulator:
    """Kernel adapter for one VED: profile-driven load/pv, battery dispatch,
    register map, and a parallel battery-disabled baseline trace."""

    def __init__(self, config: VedConfig, ems_config: EmsConfig | None,
                 profiles: ProfileSet | None, step_s: int):
        self.config = config
        self.ems_config = ems_config or EmsConfig(ved=config.name)
        self.profiles = profiles
        self.step_s = step_s
        self.battery = config.battery
        self.registers = devices.VedRegisterMap()
        self.decisions: list[ems.EmsDecision] = []
        self.baseline: list[ems.EmsDecision] = []

    def _profile_value(self, fieldname: str, t: int) -> float:
        if self.profiles is None:
            return 0.0
        profile = self.profiles.get(self.config.name, fieldname)
        return profile.value_at(t) if profile is not None else 0.0

    def step(self, t: int, _inputs: dict) -> dict:
        load_kw = self._profile_value("load_kw", t)
        pv_kw = self._profile_value("pv_kw", t)
        setpoint = self.registers.take_setpoint()
        decision, self.battery = ems.ems_step(
            self.battery, t, self.step_s, load_kw, pv_kw,
            dso_limits=self.ems_config.dso_limits,
            vpp_schedules=self.ems_config.vpp_schedules,
            external_setpoint_kw=setpoint,
        )
        baseline_decision, _ = ems.ems_step(
            None, t, self.step_s, load_kw, pv_kw,
            dso_limits=self.ems_config.dso_limits,
            vpp_schedules=self.ems_config.vpp_schedules,
        )
        self.decisions.append(decision)
        self.baseline.append(baseline_decision)
        soc_percent = (
            100.0 * self.battery.soc_kwh / self.battery.capacity_kwh
            if self.battery is not None and self.battery.capacity_kwh > 0
            else 0.0
        )
        self.registers.update_state(
            pv_kw=pv_kw, battery_kw=decision.battery_setpoint_kw,
            soc_percent=soc_percent, load_kw=load_kw,
        )
        return {(f"ved:{self.config.name}", "grid_kw"): decision.grid_exchange_kw}


@dataclass
class RunOutputs:
    outdir: str
    pcap_path: str
    ground_truth_path: str
    archive_path: str
    commands_path: str
    attack_trace_path: str
    attack_transcript_path: str
    ems_decisions_path: str
    run_report_path: str
    manifest_path: str
    manifest: dict[str, str]
    report_text: str
    kpi_reports: dict[str, ems.KpiReport]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(cell) for cell in row) + "\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def run_scenario(
    scenario: Scenario,
    outdir: str | None = None,
    seed: int | None = None,
    until: int | None = None,
) -> RunOutputs:
    outdir = outdir or scenario.outdir
    seed = scenario.seed if seed is None else seed
    horizon = until or scenario.horizon_s
    os.makedirs(outdir, exist_ok=True)

    grid_model = scenario.grid_model or load_grid(scenario.grid_file)
    profiles = scenario.profiles
    if profiles is None and scenario.profiles_file:
        profiles = load_profiles(scenario.profiles_file)
    network = netsim.load_topology(scenario.topology_file)

    monitored = sorted(
        {
            (dp.element_kind, dp.element_id, dp.fieldname)
            for config in scenario.rtus
            for dp in config.datapoints.monitor
        }
    )
    controllable = sorted(
        {
            (dp.element_kind, dp.element_id, dp.fieldname)
            for config in scenario.rtus
            for dp in config.datapoints.control
        }
    )
    ved_buses = {v.name: v.bus for v in scenario.veds}

    kernel = Kernel()

    ems_sims: dict[str, EmsSimulator] = {}
    for ved_config in scenario.veds:
        sim = EmsSimulator(
            ved_config, scenario.ems_configs.get(ved_config.name), profiles,
            scenario.step_s,
        )
        ems_sims[ved_config.name] = sim
        kernel.register_simulator(
            SimulatorDescriptor(
                id=f"ems_{ved_config.name}",
                step_size=scenario.step_s,
                provides=((f"ved:{ved_config.name}", "grid_kw"),),
            ),
            sim.step,
        )

    grid_sim = GridSimulator(grid_model, profiles, monitored, controllable, ved_buses)
    grid_consumes = [(f"ved:{name}", "grid_kw") for name in ved_buses]
    grid_consumes += [(f"{k}:{e}", f) for k, e, f in controllable]
    kernel.register_simulator(
        SimulatorDescriptor(
            id="grid",
            step_size=scenario.step_s,
            provides=tuple((f"{k}:{e}", f) for k, e, f in monitored),
            consumes=tuple(grid_consumes),
            input_defaults=tuple((attr, None) for attr in grid_consumes),
        ),
        grid_sim.step,
    )
    for name in ved_buses:
        kernel.connect(
            (f"ems_{name}", f"ved:{name}", "grid_kw"),
            ("grid", f"ved:{name}", "grid_kw"),
        )

    rtu_sims: dict[str, devices.Rtu] = {}
    for config in scenario.rtus:
        rtu = devices.Rtu(config, network)
        rtu_sims[config.name] = rtu
        consumes = tuple((dp.entity, dp.fieldname) for dp in config.datapoints.monitor)
        provides = tuple((dp.entity, dp.fieldname) for dp in config.datapoints.control)
        kernel.register_simulator(
            SimulatorDescriptor(
                id=f"rtu_{config.name}",
                step_size=scenario.step_s,
                provides=provides,
                consumes=consumes,
            ),
            rtu.step,
        )
        for dp in config.datapoints.monitor:
            kernel.connect(
                ("grid", dp.entity, dp.fieldname),
                (f"rtu_{config.name}", dp.entity, dp.fieldname),
            )
        for dp in config.datapoints.control:
            kernel.connect(
                (f"rtu_{config.name}", dp.entity, dp.fieldname),
                ("grid", dp.entity, dp.fieldname),
                time_shifted=True,
            )

    mtu = None
    if scenario.mtu is not None:
        mtu = devices.Mtu(
            network, scenario.mtu.host, scenario.step_s,
            poll_period=scenario.mtu.poll_period,
        )
        for config in scenario.rtus:
            mtu.attach_rtu(config.name, network.hosts[config.host].primary_ip())
        started = False

        def mtu_step(t: int, inputs: dict, _mtu=mtu) -> dict:
            nonlocal started
            if not started:
                _mtu.start(t)
                started = True
            return _mtu.step(t, inputs)

        kernel.register_simulator(
            SimulatorDescriptor(id="mtu", step_size=scenario.step_s),
            mtu_step,
        )

    attack_agent = None
    if scenario.attack_plan is not None:
        attack_agent = attacker_mod.Attacker(network, scenario.attack_plan)
        kernel.register_simulator(
            SimulatorDescriptor(id="attacker", step_size=scenario.step_s),
            attack_agent.step,
        )

    fault: SimulatorFault | None = None
    try:
        report = kernel.run(horizon)
    except SimulatorFault as exc:
        fault = exc
        report = None

    network.close_all(horizon)

    # -- flush outputs (also on fault: partial artifacts are preserved) -----
    paths = {name: os.path.join(outdir, name) for name in HASHED_OUTPUTS}
    paths[RUN_REPORT] = os.path.join(outdir, RUN_REPORT)
    paths[MANIFEST] = os.path.join(outdir, MANIFEST)

    network.export_pcap(paths[PCAP_FILE])

    truth_rows = sorted(
        (row for rtu in rtu_sims.values() for row in rtu.truth_rows),
        key=lambda row: (row[0], row[1], row[2]),
    )
    _write_csv(paths[GROUND_TRUTH_CSV], ["t", "element", "field", "value"], truth_rows)

    archive_rows = mtu.archive if mtu is not None else []
    _write_csv(
        paths[ARCHIVE_CSV],
        ["t", "rtu", "ioa", "value", "quality"],
        ((r.t, r.rtu, r.ioa, r.value, r.quality) for r in archive_rows),
    )
    command_rows = mtu.command_log if mtu is not None else []
    _write_csv(
        paths[COMMANDS_CSV],
        ["t", "rtu", "ioa", "value", "confirmed"],
        ((r.t, r.rtu, r.ioa, r.value, r.confirmed) for r in command_rows),
    )

    trace = attack_agent.trace if attack_agent is not None else []
    _write_csv(
        paths[ATTACK_TRACE_CSV],
        ["t", "stage", "action", "target", "outcome"],
        ((e.t, e.stage, e.action, e.target, e.outcome) for e in trace),
    )
    with open(paths[ATTACK_TRANSCRIPT], "w", encoding="utf-8") as fh:
        if attack_agent is not None:
            fh.write("\n".join(attack_agent.transcript))
            if attack_agent.transcript:
                fh.write("\n")

    ems_rows = []
    kpi_reports: dict[str, ems.KpiReport] = {}
    for name, sim in ems_sims.items():
        for decision in sim.decisions:
            ems_rows.append(
                (decision.t, name, decision.battery_setpoint_kw,
                 decision.grid_exchange_kw, decision.active_mode,
                 decision.binding_constraint)
            )
        if sim.decisions:
            kpi_reports[name] = ems.evaluate_run(
                sim.decisions, sim.baseline, scenario.step_s,
                dso_limits=sim.ems_config.dso_limits,
                vpp_schedules=sim.ems_config.vpp_schedules,
            )
    ems_rows.sort(key=lambda row: (row[0], row[1]))
    _write_csv(
        paths[EMS_DECISIONS_CSV],
        ["t", "ved", "battery_kw", "grid_kw", "mode", "binding"],
        ems_rows,
    )

    report_lines = [f"scenario: {scenario.name}", f"seed: {seed}"]
    if fault is not None:
        report_lines.append(f"fault: {fault}")
    elif report is not None:
        report_lines.append(report.to_text().rstrip())
    for name, kpi in sorted(kpi_reports.items()):
        report_lines += [
            f"kpi.{name}.import_kwh: {kpi.run.import_kwh:.6f}",
            f"kpi.{name}.export_kwh: {kpi.run.export_kwh:.6f}",
            f"kpi.{name}.peak_import_kw: {kpi.run.peak_import_kw:.6f}",
            f"kpi.{name}.dso_violations: {kpi.run.dso_violations}",
            f"kpi.{name}.vpp_tracking_error_kwh: {kpi.run.vpp_tracking_error_kwh:.6f}",
            f"kpi.{name}.baseline_import_kwh: {kpi.baseline.import_kwh:.6f}",
            f"kpi.{name}.baseline_peak_import_kw: {kpi.baseline.peak_import_kw:.6f}",
        ]
    report_text = "\n".join(report_lines) + "\n"
    with open(paths[RUN_REPORT], "w", encoding="utf-8") as fh:
        fh.write(report_text)

    manifest = {name: _sha256(paths[name]) for name in HASHED_OUTPUTS}
    with open(paths[MANIFEST], "w", encoding="utf-8") as fh:
        for name in sorted(manifest):
            fh.write(f"{manifest[name]}  {name}\n")
        fh.write(f"-  {RUN_REPORT}\n")

    if fault is not None:
        raise fault

    return RunOutputs(
        outdir=outdir,
        pcap_path=paths[PCAP_FILE],
        ground_truth_path=paths[GROUND_TRUTH_CSV],
        archive_path=paths[ARCHIVE_CSV],
        commands_path=paths[COMMANDS_CSV],
        attack_trace_path=paths[ATTACK_TRACE_CSV],
        attack_transcript_path=paths[ATTACK_TRANSCRIPT],
        ems_decisions_path=paths[EMS_DECISIONS_CSV],
        run_report_path=paths[RUN_REPORT],
        manifest_path=paths[MANIFEST],
        manifest=manifest,
        report_text=report_text,
        kpi_reports=kpi_reports,
    )
