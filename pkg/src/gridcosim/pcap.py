"""Classic libpcap file synthesis from abstract packet records.

Frames are reconstructed as Ethernet II / IPv4 / TCP with correct length
fields and checksums so the capture dissects cleanly in standard tools.
Global header: magic 0xa1b2c3d4, version 2.4, linktype 1 (Ethernet).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

PCAP_MAGIC = 0xA1B2C3D4
PCAP_VERSION = (2, 4)
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

ETHERTYPE_IPV4 = 0x0800
IP_PROTO_TCP = 6
IP_TTL = 64

# TCP flag bits
FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10

FLAG_NAMES = (("FIN", FIN), ("SYN", SYN), ("RST", RST), ("PSH", PSH), ("ACK", ACK))


def flags_text(flags: int) -> str:
    names = [name for name, bit in FLAG_NAMES if flags & bit]
    return "|".join(names) if names else "none"


@dataclass(frozen=True)
class PacketRecord:
    """One captured segment; timestamps are microseconds since scenario start."""

    t_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_flags: int
    payload: bytes = b""
    seq: int = 0
    ack: int = 0


class PcapError(Exception):
    pass


def _ip_bytes(ip: str) -> bytes:
    parts = ip.split(".")
    if len(parts) != 4:
        raise PcapError(f"bad IPv4 address {ip!r}")
    return bytes(int(p) for p in parts)


def _mac_for_ip(ip: str) -> bytes:
    # Locally administered MAC derived from the IP: stable and collision-free.
    return bytes([0x02, 0x00]) + _ip_bytes(ip)


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(record: PacketRecord, ip_id: int) -> bytes:
    """Synthesize the Ethernet/IPv4/TCP frame for one record."""
    tcp_header = struct.pack(
        ">HHIIBBHHH",
        record.src_port,
        record.dst_port,
        record.seq & 0xFFFFFFFF,
        record.ack & 0xFFFFFFFF,
        5 << 4,  # data offset: 5 words, no options
        record.tcp_flags & 0x3F,
        65535,   # window
        0,       # checksum placeholder
        0,       # urgent pointer
    )
    src = _ip_bytes(record.src_ip)
    dst = _ip_bytes(record.dst_ip)
    tcp_len = len(tcp_header) + len(record.payload)
    pseudo = src + dst + struct.pack(">BBH", 0, IP_PROTO_TCP, tcp_len)
    tcp_csum = _checksum(pseudo + tcp_header + record.payload)
    tcp_header = tcp_header[:16] + struct.pack(">H", tcp_csum) + tcp_header[18:]

    total_len = 20 + tcp_len
    ip_header = struct.pack(
        ">BBHHHBBH4s4s",
        (4 << 4) | 5,  # version 4, IHL 5
        0,             # DSCP/ECN
        total_len,
        ip_id & 0xFFFF,
        0x4000,        # flags: DF
        IP_TTL,
        IP_PROTO_TCP,
        0,             # checksum placeholder
        src,
        dst,
    )
    ip_csum = _checksum(ip_header)
    ip_header = ip_header[:10] + struct.pack(">H", ip_csum) + ip_header[12:]

    eth_header = _mac_for_ip(record.dst_ip) + _mac_for_ip(record.src_ip) + struct.pack(
        ">H", ETHERTYPE_IPV4
    )
    return eth_header + ip_header + tcp_header + record.payload


def write_pcap(path, records) -> int:
    """Write records to `path` in classic pcap format; returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<IHHiIII",
                PCAP_MAGIC,
                PCAP_VERSION[0],
                PCAP_VERSION[1],
                0,  # thiszone
                0,  # sigfigs
                SNAPLEN,
                LINKTYPE_ETHERNET,
            )
        )
        last_t = -1
        for record in records:
            if record.t_us < last_t:
                raise PcapError("packet timestamps must be non-decreasing")
            last_t = record.t_us
            frame = build_frame(record, ip_id=count + 1)
            fh.write(
                struct.pack(
                    "<IIII",
                    record.t_us // 1_000_000,
                    record.t_us % 1_000_000,
                    len(frame),
                    len(frame),
                )
            )
            fh.write(frame)
            count += 1
    return count


def read_pcap(path) -> list[PacketRecord]:
    """Read back a capture written by write_pcap (strict, Ethernet/IPv4/TCP only)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24:
        raise PcapError("file shorter than the pcap global header")
    magic, vmaj, vmin, _tz, _sig, _snap, linktype = struct.unpack("<IHHiIII", data[:24])
    if magic != PCAP_MAGIC:
        raise PcapError(f"bad magic 0x{magic:08x}")
    if (vmaj, vmin) != PCAP_VERSION or linktype != LINKTYPE_ETHERNET:
        raise PcapError("unsupported pcap version or linktype")
    records = []
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise PcapError("truncated record header")
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack(
            "<IIII", data[offset : offset + 16]
        )
        offset += 16
        if incl_len != orig_len or offset + incl_len > len(data):
            raise PcapError("truncated or sliced record")
        frame = data[offset : offset + incl_len]
        offset += incl_len
        if len(frame) < 54:
            raise PcapError("frame shorter than Ethernet+IPv4+TCP headers")
        if struct.unpack(">H", frame[12:14])[0] != ETHERTYPE_IPV4:
            raise PcapError("not an IPv4 frame")
        ip = frame[14:34]
        ihl = (ip[0] & 0x0F) * 4
        total_len = struct.unpack(">H", ip[2:4])[0]
        src_ip = ".".join(str(b) for b in ip[12:16])
        dst_ip = ".".join(str(b) for b in ip[16:20])
        tcp = frame[14 + ihl : 14 + total_len]
        src_port, dst_port = struct.unpack(">HH", tcp[:4])
        seq, ack = struct.unpack(">II", tcp[4:12])
        data_off = (tcp[12] >> 4) * 4
        flags = tcp[13] & 0x3F
        payload = tcp[data_off:]
        records.append(
            PacketRecord(
                t_us=ts_sec * 1_000_000 + ts_usec,
                src_ip=src_ip,
                dst_ip=dst_ip,
                src_port=src_port,
                dst_port=dst_port,
                tcp_flags=flags,
                payload=payload,
                seq=seq,
                ack=ack,
            )
        )
    return records
