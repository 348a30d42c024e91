"""Comparative cost models and the benchmark flow they run on.

Each variant moves a file block by block, stop-and-wait, between a source
and a target node over one simulated link.  Variants differ only in the cost
terms charged at each end:

* ``per_byte_crypto``  encryption work on the payload, charged at both ends
* ``hash_passes``      digest passes over the payload, charged at both ends
* ``per_message_handshake``  per-message verification, scaled by
  ``log2(k)`` for the k-th block (lookups in a growing session index)
* ``extra_messages_per_block``  extra control frames (SecDM's tickets)
* ``sealed_control``  whether read requests and acks carry sealed tokens and
  receipts or are plain HDFS frames

A shared extract/load term ``extract_load * log2(k)`` is charged at the
target when the k-th block is committed; it is the same for every variant.
The log-scaled terms are pro-rated by how full the block is, so a short
final block costs proportionally less.

Migration time is measured from the source receiving the first read request
to the target committing the last block.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import nnls

from . import wire
from .core import MIB, AckMsg, BlockAccessToken, BlockId
from .crypto import KEY_SIZE, SealedBox, hash_digest, make_aad, seal
from .errors import CalibrationMissing, DegenerateFit, NonPositiveInput
from .metrics import VARIANTS, BenchRecord, Table, load_table1
from .netsim import Envelope, LinkModel, Network

BENCH_BLOCK_SIZE = 128 * MIB
HASH_COST = 1e-9  # seconds per byte per pass

# fit units; keeps the least-squares columns comparably scaled
PER_BYTE_UNIT = 1e-9
HANDSHAKE_UNIT = 1.0


@dataclass(frozen=True)
class CostModel:
    per_byte_crypto: float = 0.0
    per_message_handshake: float = 0.0
    extra_messages_per_block: int = 0
    hash_passes: int = 0
    sealed_control: bool = False

    def __post_init__(self):
        if min(self.per_byte_crypto, self.per_message_handshake) < 0:
            raise ValueError("cost terms must be non-negative")
        if self.extra_messages_per_block < 0 or self.hash_passes < 0:
            raise ValueError("counts must be non-negative")


# Structural terms per variant.  The calibration fits the two continuous
# parameters on top of these.
STRUCTURE: dict[str, CostModel] = {
    "baseline": CostModel(),
    "secured2": CostModel(hash_passes=1, sealed_control=True),
    "secdm3": CostModel(hash_passes=2, extra_messages_per_block=1, sealed_control=True),
    "proposed": CostModel(hash_passes=1, sealed_control=True),
}


@dataclass(frozen=True)
class BenchEnvironment:
    rate: float = 64e6  # bits per second
    latency: float = 0.0
    block_size: int = BENCH_BLOCK_SIZE
    hash_cost: float = HASH_COST
    extract_load: float = 0.0

    def __post_init__(self):
        if self.block_size <= 0:
            raise ValueError("block size must be positive")

    @property
    def link(self) -> LinkModel:
        return LinkModel(rate=self.rate, latency=self.latency)


@dataclass
class SecDMState:
    """Per-migration state of the SecDM comparison protocol.

    One key stands in for both of its session keys; a ticket is sealed per
    block and travels ahead of that block.
    """

    session_key: bytes = field(repr=False)
    random_seed: bytes
    tickets: list[SealedBox] = field(default_factory=list)

    @classmethod
    def new(cls, rng: random.Random) -> "SecDMState":
        return cls(session_key=rng.randbytes(KEY_SIZE), random_seed=rng.randbytes(16))

    def issue_ticket(self, index: int, rng: random.Random) -> SealedBox:
        body = index.to_bytes(8, "big") + hash_digest(self.random_seed, index.to_bytes(8, "big")).value
        box = seal(self.session_key, body, make_aad("secdm-ticket", index), rng)
        self.tickets.append(box)
        return box


def _control_sizes() -> tuple[int, int, int]:
    """Wire sizes of a sealed read request, a sealed ack and a ticket, from real encodings."""
    rng = random.Random(0)
    key = bytes(KEY_SIZE)
    token = seal(key, wire.encode_token(BlockAccessToken(BlockId("f", 0), "B/dn0", "r-0000000000000000", 0.0)), wire.token_aad("s-0000000000000000"), rng)
    request = wire.encode(wire.ReadRequest("s-0000000000000000", token))
    receipt = wire.encode_receipt(bytes(32), BlockId("f", 0), "r-0000000000000000")
    ack = wire.encode(AckMsg("s-0000000000000000", "r-0000000000000000", seal(key, receipt, b"", rng)))
    ticket = SecDMState.new(rng).issue_ticket(0, rng).to_bytes()
    return len(request), len(ack), len(ticket)


REQUEST_SIZE, ACK_SIZE, TICKET_SIZE = _control_sizes()
# plain HDFS frames: block id and request id, length-prefixed, no seals
PLAIN_REQUEST_SIZE = len(make_aad("read-request", str(BlockId("f", 0)), "r-0000000000000000"))
PLAIN_ACK_SIZE = len(make_aad("ack", str(BlockId("f", 0)), "r-0000000000000000"))


@dataclass(frozen=True)
class FlowResult:
    migration_time: float
    blocks: int
    messages: int
    commits: tuple[float, ...]
    tickets: int = 0


def block_sizes(file_size: int, block_size: int) -> list[int]:
    if file_size <= 0:
        raise NonPositiveInput("file size must be positive")
    full, rest = divmod(file_size, block_size)
    return [block_size] * full + ([rest] if rest else [])


def simulate(env: BenchEnvironment, model: CostModel, file_size: int, *, seed: int = 0) -> FlowResult:
    """Run one variant's block flow through the network simulator."""
    sizes = block_sizes(file_size, env.block_size)
    n = len(sizes)
    rng = random.Random(seed)
    net = Network(rng)
    net.add_link("src", "dst", env.link)
    busy = {"src": 0.0, "dst": 0.0}
    state = {"start": None, "commits": [], "tickets": {}}
    secdm = SecDMState.new(rng) if model.extra_messages_per_block else None

    def work(node: str, duration: float, fn, *args) -> None:
        start = max(net.now, busy[node])
        busy[node] = start + duration
        net.schedule(busy[node] - net.now, fn, *args)

    request_size, ack_size = (REQUEST_SIZE, ACK_SIZE) if model.sealed_control else (PLAIN_REQUEST_SIZE, PLAIN_ACK_SIZE)

    def per_byte(size: int) -> float:
        return size * (model.per_byte_crypto + model.hash_passes * env.hash_cost)

    def scaled_log(k: int) -> float:
        return math.log2(k) * sizes[k - 1] / env.block_size

    def handshake(k: int, messages: int) -> float:
        return model.per_message_handshake * scaled_log(k) * messages

    def send(src: str, dst: str, tag: bytes, k: int, size: int) -> None:
        net.send(Envelope(src, dst, tag + k.to_bytes(4, "big"), size=size))

    def at_src(env_: Envelope) -> None:
        tag, k = env_.payload[:1], int.from_bytes(env_.payload[1:], "big")
        if tag == b"R":
            if state["start"] is None:
                state["start"] = net.now
            # the ticket goes out as soon as the read is authorised; it is on
            # the wire while the source encrypts and hashes the block
            for _ in range(model.extra_messages_per_block):
                secdm.issue_ticket(k, rng)
                send("src", "dst", b"T", k, TICKET_SIZE)
            work("src", per_byte(sizes[k - 1]), emit_block, k)
        elif tag == b"A":
            work("src", handshake(k, 1), lambda: None)

    def emit_block(k: int) -> None:
        send("src", "dst", b"D", k, sizes[k - 1])

    def at_dst(env_: Envelope) -> None:
        tag, k = env_.payload[:1], int.from_bytes(env_.payload[1:], "big")
        if tag == b"T":
            state["tickets"][k] = state["tickets"].get(k, 0) + 1
        elif tag == b"D":
            # tickets are checked together with the block they cover
            msgs = 1 + state["tickets"].pop(k, 0)
            cost = per_byte(sizes[k - 1]) + handshake(k, msgs) + env.extract_load * scaled_log(k)
            work("dst", cost, commit, k)

    def commit(k: int) -> None:
        state["commits"].append(net.now)
        # the next request goes first, so the source verifies ack k while
        # block k+1 is on the wire
        if k < n:
            send("dst", "src", b"R", k + 1, request_size)
        send("dst", "src", b"A", k, ack_size)

    net.add_node("src", at_src)
    net.add_node("dst", at_dst)
    send("dst", "src", b"R", 1, request_size)
    net.run()
    commits = tuple(state["commits"])
    return FlowResult(
        migration_time=commits[-1] - state["start"],
        blocks=n,
        messages=net.stats.sends,
        commits=commits,
        tickets=len(secdm.tickets) if secdm else 0,
    )


# ---------------------------------------------------------------------------
# calibration


@dataclass
class Calibration:
    environment: BenchEnvironment
    models: dict[str, CostModel]
    # (simulated - published) / published, per variant and size
    residuals: dict[str, dict[int, float]]

    @property
    def max_abs_residual(self) -> float:
        return max(abs(r) for row in self.residuals.values() for r in row.values())

    def to_dict(self) -> dict:
        return {
            "environment": {
                "rate": self.environment.rate,
                "latency": self.environment.latency,
                "block_size": self.environment.block_size,
                "hash_cost": self.environment.hash_cost,
                "extract_load": self.environment.extract_load,
            },
            "models": {
                v: {
                    "per_byte_crypto": m.per_byte_crypto,
                    "per_message_handshake": m.per_message_handshake,
                    "extra_messages_per_block": m.extra_messages_per_block,
                    "hash_passes": m.hash_passes,
                    "sealed_control": m.sealed_control,
                }
                for v, m in self.models.items()
            },
            "residuals": {v: {str(s): r for s, r in sorted(row.items())} for v, row in self.residuals.items()},
        }


def _times(env: BenchEnvironment, model: CostModel, sizes) -> np.ndarray:
    return np.array([simulate(env, model, s).migration_time for s in sizes])


def _fit(columns: list[np.ndarray], offset: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Non-negative least squares on relative error."""
    A = np.stack(columns, axis=1) / target[:, None]
    b = (target - offset) / target
    coef, _ = nnls(A, b)
    return coef


def calibrate(
    table: Optional[Table] = None,
    environment: BenchEnvironment = BenchEnvironment(),
    structure: Mapping[str, CostModel] = STRUCTURE,
) -> Calibration:
    """Fit the shared extract/load term on the baseline rows, then each
    variant's ``per_byte_crypto`` and ``per_message_handshake``."""
    table = table if table is not None else load_table1()
    if "baseline" not in table:
        raise DegenerateFit("baseline rows are required")
    for v, row in table.items():
        if len(row) < 2:
            raise DegenerateFit(f"{v}: need at least two sizes, got {len(row)}")

    base_sizes = sorted(table["baseline"])
    y = np.array([table["baseline"][s] for s in base_sizes])
    env0 = replace(environment, extract_load=0.0)
    off = _times(env0, structure["baseline"], base_sizes)
    col = _times(replace(environment, extract_load=1.0), structure["baseline"], base_sizes) - off
    (lam,) = _fit([col], off, y)
    env = replace(environment, extract_load=float(lam))

    models = {"baseline": structure["baseline"]}
    for v in table:
        if v == "baseline":
            continue
        shape = structure[v]
        sizes = sorted(table[v])
        y = np.array([table[v][s] for s in sizes])
        off = _times(env, shape, sizes)
        c_pb = _times(env, replace(shape, per_byte_crypto=PER_BYTE_UNIT), sizes) - off
        c_hs = _times(env, replace(shape, per_message_handshake=HANDSHAKE_UNIT), sizes) - off
        pb, hs = _fit([c_pb, c_hs], off, y)
        models[v] = replace(shape, per_byte_crypto=float(pb) * PER_BYTE_UNIT, per_message_handshake=float(hs) * HANDSHAKE_UNIT)

    residuals = {
        v: {s: (simulate(env, models[v], s).migration_time - t) / t for s, t in sorted(row.items())}
        for v, row in table.items()
    }
    return Calibration(env, models, residuals)


def uncalibrated(environment: BenchEnvironment = BenchEnvironment()) -> Calibration:
    """Structural terms only: no fitted crypto, handshake or extract/load cost."""
    return Calibration(environment, dict(STRUCTURE), {})


def run_variant(calibration: Optional[Calibration], variant: str, file_size: int, *, seed: int = 0) -> BenchRecord:
    if calibration is None:
        raise CalibrationMissing("run calibrate() first")
    if variant not in calibration.models:
        raise CalibrationMissing(f"no cost model for {variant!r}")
    result = simulate(calibration.environment, calibration.models[variant], file_size, seed=seed)
    return BenchRecord(variant, file_size, result.migration_time)


def run_bench(calibration: Calibration, sizes, variants=VARIANTS, *, seed: int = 0) -> list[BenchRecord]:
    return [run_variant(calibration, v, s, seed=seed) for v in variants for s in sizes]
