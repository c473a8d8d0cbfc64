"""Virtual field devices: RTUs, the polling MTU, and VED register maps.

An RTU maps grid measurements and actuators to IEC 104 data points and
reports over the emulated network; values are digitized to float32 at
acquisition (the wire float width). Manipulation rules installed on an RTU
change only what goes on the wire; the ground-truth log keeps the
unmanipulated digitized values, and manipulated points are flagged
in-memory, never on the wire.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

from . import iec104
from .netsim import Network, TcpConnection

REPORT_BUFFER_LIMIT = 100
POLL_TIMEOUT_STEPS = 3

IEC104_PORT = 2404

MONITOR_FIELDS = (
    "p_kw", "q_kvar", "p_from_kw", "q_from_kvar", "v_pu", "i_ka", "loading_percent",
)
CONTROL_FIELDS = ("p_kw", "q_kvar", "status")


def to_f32(value: float) -> float:
    """Round to the nearest float32, returned as float (wire precision)."""
    return struct.unpack("<f", struct.pack("<f", value))[0]


class DeviceError(Exception):
    pass


class UnknownIoa(DeviceError):
    pass


class NegativeConfirm(DeviceError):
    pass


class Timeout(DeviceError):
    pass


@dataclass(frozen=True)
class DataPoint:
    ioa: int
    direction: str      # monitor | control
    element_kind: str   # bus | line | trafo | load | sgen
    element_id: str
    fieldname: str
    scale: float = 1.0
    unit: str = ""

    @property
    def entity(self) -> str:
        return f"{self.element_kind}:{self.element_id}"


@dataclass
class DataPointMap:
    entries: list[DataPoint]

    def __post_init__(self):
        ioas = [dp.ioa for dp in self.entries]
        if len(ioas) != len(set(ioas)):
            raise DeviceError("IOA assigned twice within one RTU")
        for dp in self.entries:
            if dp.direction == "monitor" and dp.fieldname not in MONITOR_FIELDS:
                raise DeviceError(f"IOA {dp.ioa}: '{dp.fieldname}' is not readable")
            if dp.direction == "control" and dp.fieldname not in CONTROL_FIELDS:
                raise DeviceError(f"IOA {dp.ioa}: '{dp.fieldname}' is not actuatable")
            if dp.direction not in ("monitor", "control"):
                raise DeviceError(f"IOA {dp.ioa}: bad direction '{dp.direction}'")

    @property
    def monitor(self) -> list[DataPoint]:
        return [dp for dp in self.entries if dp.direction == "monitor"]

    @property
    def control(self) -> list[DataPoint]:
        return [dp for dp in self.entries if dp.direction == "control"]

    def point(self, ioa: int) -> DataPoint | None:
        for dp in self.entries:
            if dp.ioa == ioa:
                return dp
        return None


@dataclass
class ManipulationRule:
    kind: str                      # scale | offset | freeze | fdi_stealth
    factor: float = 1.0
    delta: float = 0.0
    frozen: dict[int, float] = field(default_factory=dict)

    def apply(self, ioa: int, value: float) -> float:
        if self.kind in ("scale", "fdi_stealth"):
            return to_f32(value * self.factor)
        if self.kind == "offset":
            return to_f32(value + self.delta)
        if self.kind == "freeze":
            return self.frozen.setdefault(ioa, value)
        raise DeviceError(f"unknown manipulation kind '{self.kind}'")


@dataclass
class RtuConfig:
    name: str
    host: str
    common_address: int
    datapoints: DataPointMap
    report_period: int


class Rtu:
    """Controlled-station field device bridging grid values onto IEC 104."""

    def __init__(self, config: RtuConfig, network: Network):
        self.config = config
        self.network = network
        self.session = iec104.ConnectionState(role="controlled")
        self.overrides: dict[int, ManipulationRule] = {}
        self.current: dict[int, float] = {}        # digitized truth per monitor IOA
        self.last_sent: dict[int, float] = {}      # last wire value per IOA
        self.buffer: deque = deque(maxlen=REPORT_BUFFER_LIMIT)
        self.truth_rows: list[tuple[int, str, str, float]] = []
        self._conn: TcpConnection | None = None
        self._rx = b""
        self._pending_outputs: dict[tuple[str, str], float] = {}
        network.register_handler(config.host, IEC104_PORT, self)
        network.register_command(config.host, "rtu-override", self._override_hook,
                                 require_admin=True)

    # -- kernel simulator --------------------------------------------------

    def step(self, t: int, inputs: dict) -> dict:
        for dp in self.config.datapoints.monitor:
            raw = inputs.get((dp.entity, dp.fieldname))
            if raw is not None:
                self.current[dp.ioa] = to_f32(raw * dp.scale)
        if t % self.config.report_period == 0:
            self.report(t)
        outputs = self._pending_outputs
        self._pending_outputs = {}
        return outputs

    # -- reporting ---------------------------------------------------------

    def wire_value(self, ioa: int) -> float | None:
        truth = self.current.get(ioa)
        if truth is None:
            return None
        rule = self.overrides.get(ioa)
        return truth if rule is None else rule.apply(ioa, truth)

    def override_active(self, ioa: int) -> bool:
        return ioa in self.overrides

    def report(self, t: int):
        """Spontaneous transmission of every monitor point (buffered when down)."""
        for dp in self.config.datapoints.monitor:
            truth = self.current.get(dp.ioa)
            if truth is None:
                continue
            wire = self.wire_value(dp.ioa)
            self.truth_rows.append((t, dp.entity, dp.fieldname, truth))
            self.last_sent[dp.ioa] = wire
            asdu = iec104.Asdu(
                type_id=iec104.M_ME_NC_1,
                cot=iec104.COT_SPONTANEOUS,
                common_address=self.config.common_address,
                objects=(iec104.InfoObject(ioa=dp.ioa, value=wire, quality=0),),
            )
            if self.session.started and self._conn is not None:
                self._transmit(self.session.send(asdu), at_s=t)
            else:
                self.buffer.append((t, asdu))

    def _flush_buffer(self):
        while self.buffer:
            _t, asdu = self.buffer.popleft()
            self._transmit(self.session.send(asdu))

    def _transmit(self, apdus, at_s: int | None = None):
        for apdu in apdus:
            self._conn.server_send(iec104.encode(apdu), at_s=at_s)

    # -- network handler (MTU side opens the connection) --------------------

    def on_connect(self, conn: TcpConnection):
        self._conn = conn
        self._rx = b""

    def on_client_data(self, conn: TcpConnection, payload: bytes):
        self._rx += payload
        apdus, used = iec104.decode_stream(self._rx)
        self._rx = self._rx[used:]
        for apdu in apdus:
            was_started = self.session.started
            self._transmit(self.session.received(apdu))
            if not was_started and self.session.started:
                self._flush_buffer()
            if apdu.kind == "I":
                self._handle_asdu(apdu.asdu)

    def _handle_asdu(self, asdu: iec104.Asdu):
        if asdu.type_id == iec104.C_IC_NA_1 and asdu.cot == iec104.COT_ACTIVATION:
            self._interrogation_reply(asdu)
        elif asdu.type_id in (iec104.C_SC_NA_1, iec104.C_SE_NC_1):
            self._actuate(asdu)

    def _interrogation_reply(self, request: iec104.Asdu):
        t = self.network._now_us // 1_000_000
        confirm = iec104.Asdu(
            type_id=iec104.C_IC_NA_1, cot=iec104.COT_ACTCON,
            common_address=self.config.common_address, objects=request.objects,
        )
        self._transmit(self.session.send(confirm))
        for dp in self.config.datapoints.monitor:
            truth = self.current.get(dp.ioa)
            if truth is None:
                continue
            wire = self.wire_value(dp.ioa)
            self.truth_rows.append((t, dp.entity, dp.fieldname, truth))
            self.last_sent[dp.ioa] = wire
            asdu = iec104.Asdu(
                type_id=iec104.M_ME_NC_1, cot=iec104.COT_INTERROGATED,
                common_address=self.config.common_address,
                objects=(iec104.InfoObject(ioa=dp.ioa, value=wire, quality=0),),
            )
            self._transmit(self.session.send(asdu))
        terminate = iec104.Asdu(
            type_id=iec104.C_IC_NA_1, cot=iec104.COT_ACTTERM,
            common_address=self.config.common_address, objects=request.objects,
        )
        self._transmit(self.session.send(terminate))

    def _actuate(self, asdu: iec104.Asdu):
        obj = asdu.objects[0]
        dp = self.config.datapoints.point(obj.ioa)
        if dp is None or dp.direction != "control":
            reject = iec104.Asdu(
                type_id=asdu.type_id, cot=iec104.COT_UNKNOWN_IOA,
                common_address=self.config.common_address, objects=asdu.objects,
            )
            self._transmit(self.session.send(reject))
            return
        if asdu.type_id == iec104.C_SC_NA_1:
            value = float(int(obj.value) & 0x01)
        else:
            value = float(obj.value) * dp.scale
        self._pending_outputs[(dp.entity, dp.fieldname)] = value
        confirm = iec104.Asdu(
            type_id=asdu.type_id, cot=iec104.COT_ACTCON,
            common_address=self.config.common_address, objects=asdu.objects,
        )
        self._transmit(self.session.send(confirm))

    # -- attacker-facing override hook --------------------------------------

    def _override_hook(self, args: list[str], _session) -> str:
        if not args or args[0] != "install":
            raise DeviceError("usage: rtu-override install <kind> [factor=F] [delta=D] [targets=all|ioa,..]")
        kind = args[1]
        opts = dict(tok.split("=", 1) for tok in args[2:] if "=" in tok)
        factor = float(opts.get("factor", "1.0"))
        delta = float(opts.get("delta", "0.0"))
        targets_raw = opts.get("targets", "all")
        if targets_raw == "all":
            targets = [dp.ioa for dp in self.config.datapoints.monitor]
        else:
            targets = [int(part) for part in targets_raw.split(",")]
        self.install_override(kind, targets, factor=factor, delta=delta)
        return f"override {kind} installed on {len(targets)} points"

    def install_override(self, kind: str, target_ioas, factor: float = 1.0,
                         delta: float = 0.0):
        rule = ManipulationRule(kind=kind, factor=factor, delta=delta)
        for ioa in target_ioas:
            if self.config.datapoints.point(ioa) is None:
                raise UnknownIoa(f"IOA {ioa} not mapped on {self.config.name}")
            if kind == "freeze" and ioa in self.last_sent:
                rule.frozen[ioa] = self.last_sent[ioa]
            self.overrides[ioa] = rule


@dataclass
class ArchiveRow:
    t: int
    rtu: str
    ioa: int
    value: float
    quality: int


@dataclass
class CommandLogRow:
    t: int
    rtu: str
    ioa: int
    value: float
    confirmed: bool


class Mtu:
    """Controlling station: keeps sessions to all RTUs, archives their reports."""

    def __init__(self, network: Network, host: str, step_size: int,
                 poll_period: int = 0):
        self.network = network
        self.host = host
        self.step_size = step_size
        self.poll_period = poll_period
        self.archive: list[ArchiveRow] = []
        self.command_log: list[CommandLogRow] = []
        self.events: list[tuple[int, str, str]] = []
        self._rtus: dict[str, dict] = {}   # name -> {ip, conn, session, rx, pending}
        self._last_confirm: dict[str, iec104.Asdu | None] = {}

    def attach_rtu(self, name: str, ip: str):
        self._rtus[name] = {
            "ip": ip, "conn": None,
            "session": iec104.ConnectionState(role="controlling"),
            "rx": b"", "pending_poll": None,
        }

    def start(self, t: int = 0):
        """Open all RTU connections and begin data transfer."""
        for name in self._rtus:
            self._connect(name, t)

    def _connect(self, name: str, t: int):
        entry = self._rtus[name]
        try:
            conn = self.network.open_connection(self.host, entry["ip"], IEC104_PORT, at_s=t)
        except Exception:
            self.events.append((t, "connect-failed", name))
            return
        entry["conn"] = conn
        entry["session"].start_pending = True
        self.network.on_client_data(conn, lambda c, data, _n=name: self._on_data(_n, data))
        conn.send(iec104.encode(iec104.u_frame(iec104.U_STARTDT_ACT)), at_s=t)

    def _transmit(self, name: str, apdus, at_s: int | None = None):
        entry = self._rtus[name]
        for apdu in apdus:
            entry["conn"].send(iec104.encode(apdu), at_s=at_s)

    def _on_data(self, name: str, payload: bytes):
        entry = self._rtus[name]
        entry["rx"] += payload
        apdus, used = iec104.decode_stream(entry["rx"])
        entry["rx"] = entry["rx"][used:]
        t = self.network._now_us // 1_000_000
        for apdu in apdus:
            self._transmit(name, entry["session"].received(apdu))
            if apdu.kind != "I":
                continue
            asdu = apdu.asdu
            if asdu.type_id == iec104.M_ME_NC_1:
                for obj in asdu.objects:
                    self.archive.append(
                        ArchiveRow(t=t, rtu=name, ioa=obj.ioa,
                                   value=obj.value, quality=obj.quality)
                    )
            elif asdu.cot == iec104.COT_ACTCON:
                if asdu.type_id == iec104.C_IC_NA_1:
                    entry["pending_poll"] = None
                self._last_confirm[name] = asdu
            elif asdu.cot == iec104.COT_UNKNOWN_IOA:
                self._last_confirm[name] = asdu

    # -- kernel simulator ----------------------------------------------------

    def step(self, t: int, _inputs: dict) -> dict:
        for name, entry in self._rtus.items():
            pending = entry["pending_poll"]
            if pending is not None and t >= pending:
                entry["pending_poll"] = None
                self.events.append((t, "timeout", name))
        if self.poll_period and t and t % self.poll_period == 0:
            for name in self._rtus:
                try:
                    self.poll(name, t)
                except (Timeout, DeviceError):
                    pass
        return {}

    # -- operations ----------------------------------------------------------

    def poll(self, name: str, t: int) -> list[ArchiveRow]:
        """General interrogation of one RTU; returns the newly archived rows."""
        entry = self._rtus[name]
        before = len(self.archive)
        request = iec104.Asdu(
            type_id=iec104.C_IC_NA_1, cot=iec104.COT_ACTIVATION,
            common_address=0,
            objects=(iec104.InfoObject(ioa=0, value=iec104.QOI_STATION),),
        )
        entry["pending_poll"] = t + POLL_TIMEOUT_STEPS * self.step_size
        if entry["conn"] is None or entry["conn"].closed:
            return []
        try:
            # delivery is synchronous: the act-con arrives inside this call
            # and clears pending_poll via _on_data
            self._transmit(name, entry["session"].send(request), at_s=t)
        except Exception:
            return []
        return self.archive[before:]

    def command(self, name: str, ioa: int, value: float, t: int,
                control_map: DataPointMap | None = None) -> bool:
        """Switch or set-point command to one RTU data point."""
        entry = self._rtus.get(name)
        if entry is None:
            raise DeviceError(f"no RTU '{name}' attached")
        if control_map is not None:
            dp = control_map.point(ioa)
            if dp is None or dp.direction != "control":
                raise UnknownIoa(f"IOA {ioa} is not a control point")
            type_id = iec104.C_SC_NA_1 if dp.fieldname == "status" else iec104.C_SE_NC_1
        else:
            type_id = iec104.C_SE_NC_1
        obj = (
            iec104.InfoObject(ioa=ioa, value=int(value) & 0x01)
            if type_id == iec104.C_SC_NA_1
            else iec104.InfoObject(ioa=ioa, value=float(value))
        )
        request = iec104.Asdu(
            type_id=type_id, cot=iec104.COT_ACTIVATION,
            common_address=0, objects=(obj,),
        )
        self._last_confirm[name] = None
        self._transmit(name, entry["session"].send(request), at_s=t)
        confirm = self._last_confirm.get(name)
        confirmed = confirm is not None and confirm.cot == iec104.COT_ACTCON
        self.command_log.append(
            CommandLogRow(t=t, rtu=name, ioa=ioa, value=value, confirmed=confirmed)
        )
        if confirm is not None and confirm.cot == iec104.COT_UNKNOWN_IOA:
            raise NegativeConfirm(f"RTU {name} rejected IOA {ioa}")
        return confirmed


# -- VED register map --------------------------------------------------------

REGISTER_LAYOUT = (
    (0, "pv_power_kw", "ro"),
    (1, "battery_power_kw", "ro"),
    (2, "battery_soc_percent", "ro"),
    (3, "load_power_kw", "ro"),
    (10, "setpoint_kw", "rw"),
)

REGISTER_SCALE = 100  # value = kw (or percent) x 100, two's complement 16-bit


class IllegalAddress(DeviceError):
    pass


class IllegalWrite(DeviceError):
    pass


def encode_register(value: float) -> int:
    scaled = int(round(value * REGISTER_SCALE))
    if not -32768 <= scaled <= 32767:
        raise DeviceError(f"register value {value} out of 16-bit range")
    return scaled & 0xFFFF


def decode_register(raw: int) -> float:
    if raw >= 0x8000:
        raw -= 0x10000
    return raw / REGISTER_SCALE


class VedRegisterMap:
    """Holding-register view of one smart home's behind-the-meter assets."""

    def __init__(self):
        self._meaning = {addr: meaning for addr, meaning, _ in REGISTER_LAYOUT}
        self._access = {addr: access for addr, _, access in REGISTER_LAYOUT}
        self._values = {addr: 0 for addr, _, _ in REGISTER_LAYOUT}
        self._setpoint_written = False

    def read(self, addr: int) -> int:
        if addr not in self._values:
            raise IllegalAddress(f"no register at address {addr}")
        return self._values[addr]

    def write(self, addr: int, value: int) -> bool:
        if addr not in self._values:
            raise IllegalAddress(f"no register at address {addr}")
        if self._access[addr] != "rw":
            raise IllegalWrite(f"register {addr} ({self._meaning[addr]}) is read-only")
        self._values[addr] = value & 0xFFFF
        self._setpoint_written = True
        return True

    def update_state(self, pv_kw: float, battery_kw: float,
                     soc_percent: float, load_kw: float):
        self._values[0] = encode_register(pv_kw)
        self._values[1] = encode_register(battery_kw)
        self._values[2] = encode_register(soc_percent)
        self._values[3] = encode_register(load_kw)

    def take_setpoint(self) -> float | None:
        """Pending battery set-point in kW, consumed once written."""
        if not self._setpoint_written:
            return None
        self._setpoint_written = False
        return decode_register(self._values[10])


def ved_access(ved: VedRegisterMap, op: str, addr: int, value: int | None = None):
    if op == "read":
        return ved.read(addr)
    if op == "write":
        if value is None:
            raise DeviceError("write needs a value")
        return ved.write(addr, value)
    raise DeviceError(f"unknown register operation '{op}'")
