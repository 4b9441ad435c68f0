"""Flow data model and the newline-delimited JSON flow file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Union

SCHEMA_VERSION = 1

_PROTOCOLS = ("tcp", "udp")


class FlowFormatError(ValueError):
    """Malformed flow file content."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FlowVersionError(FlowFormatError):
    """Flow file declares an unsupported schema version."""


@dataclass(frozen=True)
class FiveTuple:
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: str  # "tcp" or "udp"

    def __post_init__(self):
        if self.protocol not in _PROTOCOLS:
            raise ValueError(f"protocol must be tcp or udp, got {self.protocol!r}")

    def canonical_key(self) -> tuple:
        """Direction-insensitive key: key(a->b) == key(b->a)."""
        a = (self.src_addr, self.src_port)
        b = (self.dst_addr, self.dst_port)
        lo, hi = (a, b) if a <= b else (b, a)
        return (lo, hi, self.protocol)

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_addr, self.src_addr, self.dst_port,
                         self.src_port, self.protocol)


@dataclass(frozen=True)
class PacketEvent:
    rel_time: float       # seconds since first packet of the flow
    signed_length: int    # bytes; positive = forward, negative = backward


@dataclass
class Flow:
    id: str
    five_tuple: FiveTuple
    packets: list[PacketEvent] = field(default_factory=list)
    label: str | None = None

    def __len__(self) -> int:
        return len(self.packets)


def filter_short_flows(flows: Iterable[Flow], min_packets: int = 100) -> list[Flow]:
    """Drop flows with fewer than min_packets packets, preserving order."""
    if min_packets < 1:
        raise ValueError("min_packets must be >= 1")
    return [f for f in flows if len(f.packets) >= min_packets]


def _flow_to_record(flow: Flow) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "id": flow.id,
        "tuple": {
            "src": flow.five_tuple.src_addr,
            "dst": flow.five_tuple.dst_addr,
            "sport": flow.five_tuple.src_port,
            "dport": flow.five_tuple.dst_port,
            "proto": flow.five_tuple.protocol,
        },
        "label": flow.label,
        "pkts": [[p.rel_time, p.signed_length] for p in flow.packets],
    }


def _record_to_flow(rec: dict, line: int) -> Flow:
    try:
        t = rec["tuple"]
        five = FiveTuple(t["src"], t["dst"], int(t["sport"]), int(t["dport"]),
                         t["proto"])
        packets = []
        for rel_time, signed_length in rec["pkts"]:
            rel_time = float(rel_time)
            signed_length = int(signed_length)
            if rel_time < 0:
                raise FlowFormatError(f"negative rel_time {rel_time}", line)
            if abs(signed_length) < 1:
                raise FlowFormatError("zero packet length", line)
            packets.append(PacketEvent(rel_time, signed_length))
        if not packets:
            raise FlowFormatError("flow has no packets", line)
        return Flow(id=str(rec["id"]), five_tuple=five, packets=packets,
                    label=rec.get("label"))
    except FlowFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FlowFormatError(f"bad flow record: {exc}", line) from exc


Sink = Union[str, Path, IO[str]]


def _open_for(target: Sink, mode: str):
    if isinstance(target, (str, Path)):
        return open(target, mode, encoding="utf-8", newline="\n"), True
    return target, False


def write_flows(flows: Iterable[Flow], sink: Sink) -> None:
    fh, owned = _open_for(sink, "w")
    try:
        fh.write(json.dumps({"v": SCHEMA_VERSION, "format": "flows"}) + "\n")
        for flow in flows:
            fh.write(json.dumps(_flow_to_record(flow)) + "\n")
    finally:
        if owned:
            fh.close()


def read_flows(source: Sink) -> list[Flow]:
    fh, owned = _open_for(source, "r")
    try:
        lines = fh.read().splitlines()
    finally:
        if owned:
            fh.close()
    if not lines:
        raise FlowFormatError("empty file: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FlowFormatError(f"bad header: {exc}", 1) from exc
    if not isinstance(header, dict) or header.get("format") != "flows":
        raise FlowFormatError("not a flow file (bad header line)", 1)
    if header.get("v") != SCHEMA_VERSION:
        raise FlowVersionError(f"unsupported schema version {header.get('v')}", 1)
    flows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FlowFormatError(f"bad JSON: {exc}", lineno) from exc
        if rec.get("v") != SCHEMA_VERSION:
            raise FlowVersionError(f"unsupported schema version {rec.get('v')}",
                                   lineno)
        flows.append(_record_to_flow(rec, lineno))
    return flows
