import struct

import pytest

from gridcosim.pcap import (
    ACK,
    PSH,
    SYN,
    PacketRecord,
    PcapError,
    build_frame,
    read_pcap,
    write_pcap,
)


def record(t_us=1000, payload=b"", flags=SYN, sport=40000, dport=2404):
    return PacketRecord(
        t_us=t_us, src_ip="10.0.0.1", dst_ip="10.0.0.2",
        src_port=sport, dst_port=dport, tcp_flags=flags,
        payload=payload, seq=100, ack=200,
    )


def ones_complement_sum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def test_empty_log_is_24_byte_file(tmp_path):
    path = tmp_path / "empty.pcap"
    assert write_pcap(path, []) == 0
    data = path.read_bytes()
    assert len(data) == 24
    magic, vmaj, vmin = struct.unpack("<IHH", data[:8])
    assert (magic, vmaj, vmin) == (0xA1B2C3D4, 2, 4)
    assert struct.unpack("<I", data[20:24])[0] == 1  # linktype ethernet


def test_single_record_file_length(tmp_path):
    payload = b"\x68\x04\x07\x00\x00\x00"
    path = tmp_path / "one.pcap"
    write_pcap(path, [record(payload=payload, flags=PSH | ACK)])
    frame_len = 14 + 20 + 20 + len(payload)
    assert path.stat().st_size == 24 + 16 + frame_len


def test_ip_and_tcp_checksums_verify():
    frame = build_frame(record(payload=b"hello", flags=PSH | ACK), ip_id=1)
    ip_header = frame[14:34]
    assert ones_complement_sum(ip_header) == 0xFFFF
    total_len = struct.unpack(">H", ip_header[2:4])[0]
    tcp = frame[34 : 14 + total_len]
    pseudo = ip_header[12:20] + struct.pack(">BBH", 0, 6, len(tcp))
    assert ones_complement_sum(pseudo + tcp) == 0xFFFF


def test_timestamps_must_not_decrease(tmp_path):
    with pytest.raises(PcapError):
        write_pcap(tmp_path / "bad.pcap", [record(t_us=2000), record(t_us=1000)])


def test_roundtrip_through_reader(tmp_path):
    records = [
        record(t_us=1_500_000, flags=SYN),
        record(t_us=1_501_000, payload=b"abc", flags=PSH | ACK),
    ]
    path = tmp_path / "rt.pcap"
    write_pcap(path, records)
    back = read_pcap(path)
    assert len(back) == 2
    assert back[0].tcp_flags == SYN and back[0].payload == b""
    assert back[1].payload == b"abc"
    assert back[1].t_us == 1_501_000
    assert back[1].src_ip == "10.0.0.1" and back[1].dst_port == 2404
    assert back[1].seq == 100 and back[1].ack == 200
