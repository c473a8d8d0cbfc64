"""In-process emulation of the IT/OT network.

Hosts, switches and links are built from a topology file; TCP is modeled as
a reliable in-order byte stream with synthetic handshake/teardown records;
every segment is appended to a packet log that exports as a classic PCAP.
Services are behavioral stubs (banner or scripted request/response), and
hosts carry a small privilege model (accounts, SUID binaries, sudoers
scripts) with attachable vulnerabilities.

Topology file schema:

  [host <name>]
  interface = <ip> <cidr>
  service = <kind> <port> [banner=<text>] [run_as=<user>] [rce=<vuln-id>]
  account = <user> <user|admin>
  suid = <binary> [vuln=<vuln-id>]
  sudoers = <script> [vuln=<vuln-id>]

  [switch <name>]

  [link]
  <id>  a=<node> b=<node> latency_ms=<ms>

  [firewall]
  deny = <src-cidr> <dst-cidr> [port=<port>]
  allow = <src-cidr> <dst-cidr> [port=<port>]
"""

from __future__ import annotations

import ipaddress
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .configfile import ConfigError, as_float, parse_config, sections_of
from .pcap import ACK, FIN, PSH, RST, SYN, PacketRecord, write_pcap

SERVICE_KINDS = ("ssh", "telnet", "http", "snmp", "iec104")

DEFAULT_BANNERS = {
    "ssh": "SSH-2.0-OpenSSH_7.6p1",
    "telnet": "Ubuntu 18.04 LTS",
    "http": "nginx/1.18.0",
    "snmp": "SNMPv2-agent",
    "iec104": "IEC104-telecontrol",
}

DEFAULT_SERVICE_USERS = {"http": "www-data"}

COMMON_SCAN_PORTS = (21, 22, 23, 80, 102, 161, 502, 2404)

EPHEMERAL_PORT_BASE = 40000
ISN_BASE = 10000
ISN_STRIDE = 1000

US_PER_S = 1_000_000


class NetError(Exception):
    pass


class DuplicateIp(NetError):
    pass


class DisconnectedHost(NetError):
    pass


class Unreachable(NetError):
    pass


class ConnectionRefused(NetError):
    pass


class InvalidSession(NetError):
    pass


class UnknownCommand(NetError):
    pass


class PermissionDenied(NetError):
    pass


class NoVector(NetError):
    pass


@dataclass(frozen=True)
class Vulnerability:
    id: str
    kind: str                 # rce_command_injection | pe_suid | pe_sudoers
    locus: str                # service port (as text) or binary/script name
    precondition: str = ""    # session privilege required to exploit ("" = none)


@dataclass
class Service:
    port: int
    kind: str
    banner: str = ""
    run_as: str = "root"
    vulnerabilities: list[Vulnerability] = field(default_factory=list)

    def __post_init__(self):
        if not self.banner:
            self.banner = DEFAULT_BANNERS.get(self.kind, self.kind)

    def rce_vulnerability(self) -> Vulnerability | None:
        for vuln in self.vulnerabilities:
            if vuln.kind == "rce_command_injection":
                return vuln
        return None


@dataclass
class Host:
    name: str
    interfaces: list[tuple[str, str]] = field(default_factory=list)  # (ip, cidr)
    services: list[Service] = field(default_factory=list)
    accounts: list[tuple[str, str]] = field(default_factory=list)    # (user, privilege)
    suid_binaries: list[str] = field(default_factory=list)
    sudoers_scripts: list[str] = field(default_factory=list)
    host_vulnerabilities: list[Vulnerability] = field(default_factory=list)
    command_hooks: dict[str, tuple[Callable, bool]] = field(default_factory=dict)

    def service_on(self, port: int) -> Service | None:
        for service in self.services:
            if service.port == port:
                return service
        return None

    def privilege_of(self, user: str) -> str:
        for name, privilege in self.accounts:
            if name == user:
                return privilege
        return "user"

    def uid_of(self, user: str) -> int:
        if user == "root":
            return 0
        if user == "www-data":
            return 33
        for i, (name, _) in enumerate(self.accounts):
            if name == user:
                return 1000 + i
        return 65534

    def primary_ip(self) -> str:
        return self.interfaces[0][0]


@dataclass
class Link:
    id: str
    a: str
    b: str
    latency_us: int
    up: bool = True


@dataclass
class FirewallRule:
    action: str     # allow | deny
    src_cidr: str
    dst_cidr: str
    port: int | None = None


@dataclass
class Session:
    id: int
    host: str
    user: str
    privilege: str
    via_vulnerability: str
    transcript: list[str] = field(default_factory=list)
    open: bool = True


@dataclass
class CommandResult:
    stdout: str
    exit_code: int
    effective_user: str


@dataclass
class DeliveryEvent:
    send_us: int
    deliver_us: int
    record: PacketRecord


class TcpConnection:
    """One emulated TCP connection; both ends may send on the byte stream."""

    def __init__(self, network, client_host, client_ip, client_port,
                 server_host, server_ip, server_port, latency_us):
        self.network = network
        self.client_host = client_host
        self.client_ip = client_ip
        self.client_port = client_port
        self.server_host = server_host
        self.server_ip = server_ip
        self.server_port = server_port
        self.latency_us = latency_us
        index = network._next_conn_index()
        self.client_seq = ISN_BASE + 2 * index * ISN_STRIDE
        self.server_seq = ISN_BASE + (2 * index + 1) * ISN_STRIDE
        self.established = False
        self.closed = False
        self.handler = None

    def _record(self, from_client: bool, flags: int, payload: bytes, t_us: int):
        if from_client:
            record = PacketRecord(
                t_us=t_us, src_ip=self.client_ip, dst_ip=self.server_ip,
                src_port=self.client_port, dst_port=self.server_port,
                tcp_flags=flags, payload=payload,
                seq=self.client_seq, ack=self.server_seq if flags & ACK else 0,
            )
            self.client_seq += len(payload) + (1 if flags & (SYN | FIN) else 0)
        else:
            record = PacketRecord(
                t_us=t_us, src_ip=self.server_ip, dst_ip=self.client_ip,
                src_port=self.server_port, dst_port=self.client_port,
                tcp_flags=flags, payload=payload,
                seq=self.server_seq, ack=self.client_seq if flags & ACK else 0,
            )
            self.server_seq += len(payload) + (1 if flags & (SYN | FIN) else 0)
        self.network._log(record)
        return record

    def send(self, payload: bytes, at_s: int | None = None, from_server: bool = False) -> DeliveryEvent:
        """Send bytes on the stream; the peer handler sees them after one path latency."""
        if self.closed:
            raise NetError("connection is closed")
        if self.network.path_latency_us(self.client_host, self.server_host) is None:
            raise Unreachable(
                f"path between {self.client_host} and {self.server_host} is down"
            )
        send_us = self.network._clock(at_s)
        deliver_us = send_us + self.latency_us
        record = self._record(not from_server, PSH | ACK, payload, deliver_us)
        self.network._advance(deliver_us)
        if from_server:
            self.network._dispatch_client_data(self, payload)
        else:
            if self.handler is not None:
                self.handler.on_client_data(self, payload)
        return DeliveryEvent(send_us=send_us, deliver_us=deliver_us, record=record)

    def server_send(self, payload: bytes, at_s: int | None = None) -> DeliveryEvent:
        return self.send(payload, at_s=at_s, from_server=True)

    def close(self, at_s: int | None = None):
        if self.closed:
            return
        t = self.network._clock(at_s)
        lat = self.latency_us
        self._record(True, FIN | ACK, b"", t + lat)
        self._record(False, ACK, b"", t + 2 * lat)
        self._record(False, FIN | ACK, b"", t + 3 * lat)
        self._record(True, ACK, b"", t + 4 * lat)
        self.network._advance(t + 4 * lat)
        self.closed = True


class Network:
    def __init__(self):
        self.hosts: dict[str, Host] = {}
        self.switches: list[str] = []
        self.links: list[Link] = []
        self.firewall_rules: list[FirewallRule] = []
        self.packet_log: list[PacketRecord] = []
        self.ip_table: dict[str, str] = {}
        self._adjacency: dict[str, list[tuple[str, Link]]] = {}
        self._handlers: dict[tuple[str, int], object] = {}
        self._client_handlers: dict[int, Callable] = {}
        self._sessions: dict[int, Session] = {}
        self._connections: list[TcpConnection] = []
        self._conn_count = 0
        self._session_count = 0
        self._ephemeral = EPHEMERAL_PORT_BASE
        self._now_us = 0

    # -- construction ------------------------------------------------------

    def add_host(self, host: Host):
        if host.name in self._adjacency:
            raise NetError(f"duplicate node name '{host.name}'")
        for ip, cidr in host.interfaces:
            if ip in self.ip_table:
                raise DuplicateIp(f"ip {ip} assigned twice")
            if ipaddress.ip_address(ip) not in ipaddress.ip_network(cidr):
                raise NetError(f"{host.name}: ip {ip} not inside subnet {cidr}")
            self.ip_table[ip] = host.name
        self.hosts[host.name] = host
        self._adjacency[host.name] = []

    def add_switch(self, name: str):
        if name in self._adjacency:
            raise NetError(f"duplicate node name '{name}'")
        self.switches.append(name)
        self._adjacency[name] = []

    def add_link(self, link: Link):
        for end in (link.a, link.b):
            if end not in self._adjacency:
                raise NetError(f"link '{link.id}' references unknown node '{end}'")
        self.links.append(link)
        self._adjacency[link.a].append((link.b, link))
        self._adjacency[link.b].append((link.a, link))

    def validate(self):
        if not self.hosts:
            raise NetError("topology has no hosts")
        first = next(iter(self.hosts))
        seen = set()
        stack = [first]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(peer for peer, link in self._adjacency[node] if link.up)
        unreachable = [name for name in self.hosts if name not in seen]
        if unreachable:
            raise DisconnectedHost(f"hosts without a network path: {sorted(unreachable)}")

    # -- routing -----------------------------------------------------------

    def host_of_ip(self, ip: str) -> Host | None:
        name = self.ip_table.get(ip)
        return self.hosts.get(name) if name else None

    def path_latency_us(self, src_host: str, dst_host: str) -> int | None:
        """BFS hop-count route; returns summed link latency, None if unroutable."""
        if src_host == dst_host:
            return 0
        best: dict[str, int] = {src_host: 0}
        queue = deque([src_host])
        parents: dict[str, str] = {}
        while queue:
            node = queue.popleft()
            for peer, link in self._adjacency[node]:
                if not link.up or peer in best:
                    continue
                best[peer] = best[node] + link.latency_us
                parents[peer] = node
                if peer == dst_host:
                    return best[peer]
                queue.append(peer)
        return None

    def _firewall_allows(self, src_ip: str, dst_ip: str, port: int) -> bool:
        src = ipaddress.ip_address(src_ip)
        dst = ipaddress.ip_address(dst_ip)
        for rule in self.firewall_rules:
            if rule.port is not None and rule.port != port:
                continue
            if src in ipaddress.ip_network(rule.src_cidr) and dst in ipaddress.ip_network(rule.dst_cidr):
                return rule.action == "allow"
        return True

    def _route_or_raise(self, src_host: str, dst_ip: str, port: int) -> tuple[Host, int]:
        dst = self.host_of_ip(dst_ip)
        if dst is None:
            raise Unreachable(f"no host owns {dst_ip}")
        latency = self.path_latency_us(src_host, dst.name)
        if latency is None:
            raise Unreachable(f"no path from {src_host} to {dst_ip}")
        src_ip = self.hosts[src_host].primary_ip()
        if not self._firewall_allows(src_ip, dst_ip, port):
            raise Unreachable(f"firewall denies {src_ip} -> {dst_ip}:{port}")
        return dst, latency

    # -- clock and log -----------------------------------------------------

    def _clock(self, at_s: int | None) -> int:
        if at_s is not None:
            self._now_us = max(self._now_us, at_s * US_PER_S)
        return self._now_us

    def _advance(self, t_us: int):
        self._now_us = max(self._now_us, t_us)

    def _log(self, record: PacketRecord):
        self.packet_log.append(record)

    def _next_conn_index(self) -> int:
        self._conn_count += 1
        return self._conn_count - 1

    def _next_ephemeral(self) -> int:
        self._ephemeral += 1
        return self._ephemeral - 1

    # -- services ----------------------------------------------------------

    def register_handler(self, host_name: str, port: int, handler):
        """Attach a stateful handler object to a listening service."""
        host = self.hosts[host_name]
        if host.service_on(port) is None:
            raise NetError(f"{host_name} has no service on port {port}")
        self._handlers[(host_name, port)] = handler

    def on_client_data(self, conn: TcpConnection, callback: Callable):
        """Register the client-side receive callback for a connection."""
        self._client_handlers[id(conn)] = callback

    def _dispatch_client_data(self, conn: TcpConnection, payload: bytes):
        callback = self._client_handlers.get(id(conn))
        if callback is not None:
            callback(conn, payload)

    def _handler_for(self, host_name: str, port: int):
        handler = self._handlers.get((host_name, port))
        if handler is not None:
            return handler
        service = self.hosts[host_name].service_on(port)
        if service is None:
            return None
        if service.kind == "http":
            return HttpHandler(self, self.hosts[host_name], service)
        return BannerHandler(service)

    # -- transport ---------------------------------------------------------

    def open_connection(self, src_host: str, dst_ip: str, dst_port: int,
                        at_s: int | None = None) -> TcpConnection:
        dst, latency = self._route_or_raise(src_host, dst_ip, dst_port)
        t = self._clock(at_s)
        src_ip = self.hosts[src_host].primary_ip()
        conn = TcpConnection(
            self, src_host, src_ip, self._next_ephemeral(),
            dst.name, dst_ip, dst_port, latency,
        )
        service = dst.service_on(dst_port)
        if service is None:
            conn._record(True, SYN, b"", t + latency)
            conn._record(False, RST | ACK, b"", t + 2 * latency)
            self._advance(t + 2 * latency)
            raise ConnectionRefused(f"{dst_ip}:{dst_port} has no listener")
        conn._record(True, SYN, b"", t + latency)
        conn._record(False, SYN | ACK, b"", t + 2 * latency)
        conn._record(True, ACK, b"", t + 3 * latency)
        self._advance(t + 3 * latency)
        conn.established = True
        conn.handler = self._handler_for(dst.name, dst_port)
        self._connections.append(conn)
        if conn.handler is not None and hasattr(conn.handler, "on_connect"):
            conn.handler.on_connect(conn)
        return conn

    def send(self, src_host: str, dst_ip: str, dst_port: int, payload: bytes,
             at_s: int | None = None, conn: TcpConnection | None = None) -> DeliveryEvent:
        """Open (or reuse) a connection and push bytes to the destination service."""
        if conn is None:
            conn = self.open_connection(src_host, dst_ip, dst_port, at_s)
        return conn.send(payload, at_s=at_s)

    def close_all(self, at_s: int | None = None):
        for conn in self._connections:
            if conn.established and not conn.closed:
                conn.close(at_s)

    # -- scanning ----------------------------------------------------------

    def scan_subnet(self, from_host: str, subnet: str,
                    ports=COMMON_SCAN_PORTS, at_s: int | None = None) -> dict:
        """TCP SYN scan of every registered address in `subnet` except our own.

        Each probe logs a SYN and either a SYN-ACK (open) or RST (closed).
        """
        net = ipaddress.ip_network(subnet)
        own_ips = {ip for ip, _ in self.hosts[from_host].interfaces}
        targets = sorted(
            (ip for ip in self.ip_table if ipaddress.ip_address(ip) in net and ip not in own_ips),
            key=ipaddress.ip_address,
        )
        if targets and all(
            self.path_latency_us(from_host, self.ip_table[ip]) is None for ip in targets
        ):
            raise Unreachable(f"no route from {from_host} into {subnet}")
        report: dict[str, list[tuple[int, str, str]]] = {}
        src_ip = self.hosts[from_host].primary_ip()
        for ip in targets:
            host = self.host_of_ip(ip)
            latency = self.path_latency_us(from_host, host.name)
            if latency is None:
                continue
            open_ports = []
            for port in sorted(ports):
                t = self._clock(at_s)
                probe = PacketRecord(
                    t_us=t + latency, src_ip=src_ip, dst_ip=ip,
                    src_port=self._next_ephemeral(), dst_port=port,
                    tcp_flags=SYN, payload=b"", seq=0, ack=0,
                )
                self._log(probe)
                service = host.service_on(port)
                allowed = self._firewall_allows(src_ip, ip, port)
                flags = SYN | ACK if (service is not None and allowed) else RST | ACK
                self._log(
                    PacketRecord(
                        t_us=t + 2 * latency, src_ip=ip, dst_ip=src_ip,
                        src_port=port, dst_port=probe.src_port,
                        tcp_flags=flags, payload=b"", seq=0, ack=1,
                    )
                )
                self._advance(t + 2 * latency)
                if service is not None and allowed:
                    open_ports.append((port, service.kind, service.banner))
            report[ip] = open_ports
        return report

    # -- sessions and shell ------------------------------------------------

    def open_session(self, host_name: str, via_vulnerability: str, user: str) -> Session:
        """Open a command session; only possible through an attached RCE weakness."""
        host = self.hosts[host_name]
        vuln = None
        for service in host.services:
            for candidate in service.vulnerabilities:
                if candidate.id == via_vulnerability and candidate.kind == "rce_command_injection":
                    vuln = candidate
        if vuln is None:
            raise NoVector(f"{host_name} has no RCE vulnerability '{via_vulnerability}'")
        session = Session(
            id=self._session_count, host=host_name, user=user,
            privilege=host.privilege_of(user), via_vulnerability=via_vulnerability,
        )
        self._session_count += 1
        self._sessions[session.id] = session
        return session

    def _check_session(self, session: Session):
        if session.id not in self._sessions or not session.open:
            raise InvalidSession(f"session {session.id} is not open")

    def escalate(self, session: Session, method: str) -> Vulnerability:
        """Privilege escalation through an attached pe_suid/pe_sudoers weakness."""
        self._check_session(session)
        host = self.hosts[session.host]
        kind = "pe_suid" if method == "suid" else "pe_sudoers"
        pool = host.suid_binaries if method == "suid" else host.sudoers_scripts
        for vuln in host.host_vulnerabilities:
            if vuln.kind == kind and vuln.locus in pool:
                if vuln.precondition == "admin" and session.privilege != "admin":
                    raise PermissionDenied(f"exploit '{vuln.id}' needs admin")
                session.privilege = "admin"
                session.user = "root"
                return vuln
        raise NoVector(f"{session.host} has no exploitable {kind} vector")

    def exec_command(self, session: Session, cmdline: str) -> CommandResult:
        """Evaluate the fixed shell vocabulary in a session; logs to its transcript."""
        self._check_session(session)
        host = self.hosts[session.host]
        result = self._eval_command(host, session.user, session.privilege, cmdline, session)
        session.transcript.append(f"{session.user}@{session.host}$ {cmdline}")
        if result.stdout:
            session.transcript.append(result.stdout)
        return result

    def _eval_command(self, host: Host, user: str, privilege: str,
                      cmdline: str, session: Session | None = None) -> CommandResult:
        argv = cmdline.split()
        if not argv:
            raise UnknownCommand("empty command line")
        cmd = argv[0]
        if cmd == "whoami":
            return CommandResult(user, 0, user)
        if cmd == "id":
            uid = host.uid_of(user)
            return CommandResult(f"uid={uid}({user}) gid={uid}({user}) groups={uid}({user})", 0, user)
        if cmd == "find" and argv[1:4] == ["/", "-perm", "-4000"]:
            listing = "\n".join(f"/usr/local/bin/{name}" for name in host.suid_binaries)
            return CommandResult(listing, 0, user)
        if cmd == "sudo" and argv[1:] == ["-l"]:
            if not host.sudoers_scripts:
                return CommandResult(f"Sorry, user {user} may not run sudo on {host.name}.", 1, user)
            lines = [f"User {user} may run the following commands on {host.name}:"]
            lines += [f"    (root) NOPASSWD: /usr/local/sbin/{s}" for s in host.sudoers_scripts]
            return CommandResult("\n".join(lines), 0, user)
        if cmd in host.command_hooks:
            hook, require_admin = host.command_hooks[cmd]
            if require_admin and privilege != "admin":
                raise PermissionDenied(f"'{cmd}' requires admin privilege")
            return CommandResult(hook(argv[1:], session), 0, user)
        raise UnknownCommand(f"command not recognized: {cmd}")

    def register_command(self, host_name: str, name: str, hook: Callable,
                         require_admin: bool = True):
        self.hosts[host_name].command_hooks[name] = (hook, require_admin)

    # -- export ------------------------------------------------------------

    def export_pcap(self, path) -> int:
        return write_pcap(path, self.packet_log)


class BannerHandler:
    """Connect-time banner push for ssh/telnet/snmp-style services."""

    def __init__(self, service: Service):
        self.service = service

    def on_connect(self, conn: TcpConnection):
        conn.server_send((self.service.banner + "\r\n").encode())

    def on_client_data(self, conn: TcpConnection, payload: bytes):
        pass


class HttpHandler:
    """Minimal HTTP request/response stub with an optional command-injection CGI."""

    def __init__(self, network: Network, host: Host, service: Service):
        self.network = network
        self.host = host
        self.service = service
        self.buffer = b""

    def on_connect(self, conn: TcpConnection):
        pass

    def _respond(self, conn: TcpConnection, status: str, body: str):
        payload = (
            f"HTTP/1.1 {status}\r\n"
            f"Server: {self.service.banner}\r\n"
            f"Content-Type: text/plain\r\n"
            f"Content-Length: {len(body.encode())}\r\n"
            f"\r\n{body}"
        ).encode()
        conn.server_send(payload)

    def on_client_data(self, conn: TcpConnection, payload: bytes):
        self.buffer += payload
        if b"\r\n\r\n" not in self.buffer:
            return
        request, self.buffer = self.buffer.split(b"\r\n\r\n", 1)
        line = request.split(b"\r\n", 1)[0].decode(errors="replace")
        parts = line.split()
        if len(parts) != 3 or parts[0] != "GET":
            self._respond(conn, "400 Bad Request", "bad request\n")
            return
        path = parts[1]
        if path.startswith("/cgi-bin/exec?cmd="):
            command = path[len("/cgi-bin/exec?cmd="):].replace("+", " ")
            if self.service.rce_vulnerability() is None:
                self._respond(conn, "404 Not Found", "no such endpoint\n")
                return
            user = self.service.run_as
            try:
                result = self.network._eval_command(
                    self.host, user, self.host.privilege_of(user), command
                )
            except (UnknownCommand, PermissionDenied) as exc:
                self._respond(conn, "500 Internal Server Error", f"{exc}\n")
                return
            self._respond(conn, "200 OK", result.stdout + "\n")
            return
        self._respond(conn, "200 OK", f"<html>{self.service.banner}</html>\n")


def parse_topology(text: str, source: str = "<topology>") -> Network:
    network = Network()
    sections = parse_config(text, source)
    for section in sections_of(sections, "host"):
        if not section.name:
            raise ConfigError("host section needs a name", source, section.lineno)
        host = Host(name=section.name)
        for key, value in section.pairs:
            tokens = value.split()
            if key == "interface":
                if len(tokens) != 2:
                    raise ConfigError("interface = <ip> <cidr>", source, section.lineno)
                host.interfaces.append((tokens[0], tokens[1]))
            elif key == "service":
                if len(tokens) < 2 or tokens[0] not in SERVICE_KINDS:
                    raise ConfigError(
                        f"service = <{'|'.join(SERVICE_KINDS)}> <port> ...",
                        source, section.lineno,
                    )
                kind = tokens[0]
                port = int(tokens[1])
                opts = dict(tok.split("=", 1) for tok in tokens[2:] if "=" in tok)
                service = Service(
                    port=port, kind=kind,
                    banner=opts.get("banner", ""),
                    run_as=opts.get("run_as", DEFAULT_SERVICE_USERS.get(kind, "root")),
                )
                if "rce" in opts:
                    service.vulnerabilities.append(
                        Vulnerability(id=opts["rce"], kind="rce_command_injection",
                                      locus=str(port))
                    )
                host.services.append(service)
            elif key == "account":
                if len(tokens) != 2 or tokens[1] not in ("user", "admin"):
                    raise ConfigError("account = <user> <user|admin>", source, section.lineno)
                host.accounts.append((tokens[0], tokens[1]))
            elif key in ("suid", "sudoers"):
                name = tokens[0]
                opts = dict(tok.split("=", 1) for tok in tokens[1:] if "=" in tok)
                if key == "suid":
                    host.suid_binaries.append(name)
                    vuln_kind = "pe_suid"
                else:
                    host.sudoers_scripts.append(name)
                    vuln_kind = "pe_sudoers"
                if "vuln" in opts:
                    host.host_vulnerabilities.append(
                        Vulnerability(id=opts["vuln"], kind=vuln_kind,
                                      locus=name, precondition="user")
                    )
            else:
                raise ConfigError(f"unknown host entry '{key}'", source, section.lineno)
        if not host.interfaces:
            raise ConfigError(f"host '{host.name}' has no interface", source, section.lineno)
        ports = [s.port for s in host.services]
        if len(ports) != len(set(ports)):
            raise ConfigError(f"host '{host.name}' repeats a service port", source, section.lineno)
        network.add_host(host)
    for section in sections_of(sections, "switch"):
        if not section.name:
            raise ConfigError("switch section needs a name", source, section.lineno)
        network.add_switch(section.name)
    for section in sections_of(sections, "link"):
        for row in section.rows:
            latency_ms = as_float(
                row.get("latency_ms", "0"), "latency_ms", source, row.lineno
            )
            if latency_ms < 0:
                raise ConfigError("latency_ms must be >= 0", source, row.lineno)
            network.add_link(
                Link(
                    id=row.id,
                    a=row.require("a", source),
                    b=row.require("b", source),
                    latency_us=int(latency_ms * 1000),
                )
            )
    for section in sections_of(sections, "firewall"):
        for key, value in section.pairs:
            if key not in ("allow", "deny"):
                raise ConfigError("firewall entries are allow/deny", source, section.lineno)
            tokens = value.split()
            if len(tokens) < 2:
                raise ConfigError(f"{key} = <src-cidr> <dst-cidr> [port=N]", source, section.lineno)
            port = None
            for tok in tokens[2:]:
                if tok.startswith("port="):
                    port = int(tok.split("=", 1)[1])
            network.firewall_rules.append(
                FirewallRule(action=key, src_cidr=tokens[0], dst_cidr=tokens[1], port=port)
            )
    network.validate()
    return network


def load_topology(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read(), source=str(path))


def build_topology(text: str, source: str = "<topology>") -> Network:
    return parse_topology(text, source)
