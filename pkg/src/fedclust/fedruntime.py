"""Server/client round orchestration with uplink metering.

A round is: broadcast ``W`` to the active clients, run each client's local
work, collect their uploads, and hand them to the server's aggregation step.
All traffic goes through a transport (send/recv of :class:`Message`); only
uplink messages are metered, counted in real values.

Wire layout of one message (little-endian)::

    u8  variant tag   (1 = BroadcastW, 2 = UploadW, 3 = UploadDiff)
    u32 round
    u32 sender        (SERVER_ID for the server)
    u32 rows          (M)
    u32 cols          (K)
    f64 payload       column-major; UploadDiff carries the H H^T change (K x K)
                      then the X H^T change (M x K)
"""
from __future__ import annotations

import enum
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .linalg import sample_without_replacement

SERVER_ID = 0xFFFFFFFF
_HEADER = struct.Struct("<BIIII")


class ProtocolError(RuntimeError):
    """A message violated the round protocol (wrong shape, sender or round)."""


class Variant(enum.IntEnum):
    BROADCAST_W = 1
    UPLOAD_W = 2
    UPLOAD_DIFF = 3


@dataclass(frozen=True)
class Message:
    variant: Variant
    sender: int
    round: int
    payload: tuple

    @classmethod
    def broadcast(cls, W: np.ndarray, round: int) -> "Message":
        return cls(Variant.BROADCAST_W, SERVER_ID, round, (W.copy(),))

    @classmethod
    def upload_w(cls, W_p: np.ndarray, sender: int, round: int) -> "Message":
        return cls(Variant.UPLOAD_W, sender, round, (W_p.copy(),))

    @classmethod
    def upload_diff(cls, d_gram: np.ndarray, d_cross: np.ndarray, sender: int,
                    round: int) -> "Message":
        return cls(Variant.UPLOAD_DIFF, sender, round, (d_gram.copy(), d_cross.copy()))

    @property
    def shape_MK(self) -> tuple[int, int]:
        return self.payload[-1].shape

    def real_value_count(self) -> int:
        return sum(int(a.size) for a in self.payload)

    def encode(self) -> bytes:
        M, K = self.shape_MK
        parts = [_HEADER.pack(int(self.variant), self.round, self.sender, M, K)]
        for a in self.payload:
            parts.append(np.asarray(a, dtype="<f8").tobytes(order="F"))
        return b"".join(parts)

    @classmethod
    def decode(cls, buf: bytes) -> "Message":
        if len(buf) < _HEADER.size:
            raise ProtocolError("truncated message header")
        tag, rnd, sender, M, K = _HEADER.unpack_from(buf)
        try:
            variant = Variant(tag)
        except ValueError:
            raise ProtocolError(f"unknown variant tag {tag}") from None
        shapes = [(K, K), (M, K)] if variant is Variant.UPLOAD_DIFF else [(M, K)]
        need = _HEADER.size + 8 * sum(r * c for r, c in shapes)
        if len(buf) != need:
            raise ProtocolError(f"payload length {len(buf)} does not match header ({need})")
        arrays, off = [], _HEADER.size
        for r, c in shapes:
            n = r * c
            a = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape((r, c), order="F")
            arrays.append(a.astype(np.float64))
            off += 8 * n
        return cls(variant, sender, rnd, tuple(arrays))


class InMemoryTransport:
    """Per-recipient FIFO queues; every message sent is also appended to ``log``."""

    def __init__(self):
        self._queues: dict[int, deque] = defaultdict(deque)
        self.log: list[tuple[int, Message]] = []

    def send(self, dest: int, msg: Message) -> None:
        self._queues[dest].append(msg)
        self.log.append((dest, msg))

    def recv(self, dest: int) -> list[Message]:
        q = self._queues[dest]
        out = list(q)
        q.clear()
        return out


@dataclass
class CostMeter:
    uplink_total: int = 0
    bootstrap: int = 0
    per_round: list[int] = field(default_factory=list)

    def record_bootstrap(self, msgs: Sequence[Message]) -> None:
        n = sum(m.real_value_count() for m in msgs)
        self.bootstrap += n
        self.uplink_total += n

    def record_round(self, msgs: Sequence[Message]) -> None:
        n = sum(m.real_value_count() for m in msgs)
        self.per_round.append(n)
        self.uplink_total += n


class Participation:
    """Uniform sampling of ``m`` of ``P`` clients per round, without replacement."""

    def __init__(self, P: int, m: int, rng: np.random.Generator):
        if not 1 <= m <= P:
            raise ValueError(f"participation needs 1 <= m <= P, got m={m}, P={P}")
        self.P, self.m, self.rng = P, m, rng
        self.schedule: dict[int, np.ndarray] = {}

    def sample(self, s: int) -> np.ndarray:
        if self.m == self.P:
            active = np.arange(self.P)
        else:
            active = np.sort(sample_without_replacement(self.P, self.m, self.rng))
        self.schedule[s] = active
        return active


@dataclass
class RoundPlan:
    """What one round does.

    Each active client first runs ``local_phases`` in order, all clients
    finishing phase ``i`` before ``sync(i)`` is called and phase ``i + 1``
    starts. ``sync`` is the simulator's hook for round-global step-size
    statistics; it carries no metered traffic. ``client_step(p, W)`` then
    produces the upload and ``server_step(uploads)`` aggregates them.
    """

    round: int
    active: Sequence[int]
    broadcast: np.ndarray
    client_step: Callable[[int, np.ndarray], Message]
    server_step: Callable[[list[Message]], Any]
    upload: Variant
    local_phases: Sequence[Callable[[int, np.ndarray], None]] = ()
    sync: Callable[[int], None] | None = None


class Federation:
    """Drives rounds over a transport and meters the uplink."""

    def __init__(self, P: int, M: int, K: int, transport: InMemoryTransport | None = None):
        self.P, self.M, self.K = P, M, K
        self.transport = transport if transport is not None else InMemoryTransport()
        self.meter = CostMeter()

    def _expected_shapes(self, variant: Variant) -> list[tuple[int, int]]:
        if variant is Variant.UPLOAD_DIFF:
            return [(self.K, self.K), (self.M, self.K)]
        return [(self.M, self.K)]

    def _check_upload(self, msg: Message, p: int, s: int, variant: Variant) -> None:
        if msg.variant is not variant:
            raise ProtocolError(f"client {p} sent {msg.variant.name}, expected {variant.name}")
        if msg.sender != p or msg.round != s:
            raise ProtocolError(f"client {p} upload tagged sender={msg.sender} round={msg.round}")
        shapes = [a.shape for a in msg.payload]
        if shapes != self._expected_shapes(variant):
            raise ProtocolError(f"client {p} upload shapes {shapes} do not match "
                                f"{self._expected_shapes(variant)}")

    def bootstrap(self, uploads: Sequence[Message]) -> list[Message]:
        """One-off initial uploads from every client, metered separately."""
        for msg in uploads:
            self._check_upload(msg, msg.sender, 0, msg.variant)
            self.transport.send(SERVER_ID, msg)
        got = self.transport.recv(SERVER_ID)
        self.meter.record_bootstrap(got)
        return got

    def run_round(self, plan: RoundPlan) -> Any:
        active = [int(p) for p in plan.active]
        if not active:
            raise ValueError("a round needs at least one active client")
        if len(set(active)) != len(active) or min(active) < 0 or max(active) >= self.P:
            raise ValueError(f"invalid active set {active} for {self.P} clients")
        if plan.broadcast.shape != (self.M, self.K):
            raise ProtocolError(f"broadcast shape {plan.broadcast.shape} != {(self.M, self.K)}")
        for p in active:
            self.transport.send(p, Message.broadcast(plan.broadcast, plan.round))
        received = {}
        for p in active:
            inbox = self.transport.recv(p)
            if len(inbox) != 1 or inbox[0].variant is not Variant.BROADCAST_W:
                raise ProtocolError(f"client {p} expected one broadcast, got {len(inbox)} messages")
            received[p] = inbox[0].payload[0]
        for i, phase in enumerate(plan.local_phases):
            for p in active:
                phase(p, received[p])
            if plan.sync is not None:
                plan.sync(i)
        for p in active:
            upload = plan.client_step(p, received[p])
            self._check_upload(upload, p, plan.round, plan.upload)
            self.transport.send(SERVER_ID, upload)
        uploads = self.transport.recv(SERVER_ID)
        self.meter.record_round(uploads)
        return plan.server_step(uploads)


def closed_form_cost(alg: str, M: int, K: int, n_clients: int, s: int) -> int:
    """Accumulated uplink after ``s`` rounds.

    ``n_clients`` is P for model averaging and m for gradient sharing. The
    one-off initial upload of gradient sharing is not included.
    """
    alg = alg.lower()
    if alg in ("fedcavg", "fedcpalm"):
        return M * K * n_clients * s
    if alg == "fedcgds":
        return (M * K + K * K) * n_clients * s
    if alg in ("palm", "kmeanspp"):
        return 0
    raise ValueError(f"unknown algorithm tag {alg!r}")
