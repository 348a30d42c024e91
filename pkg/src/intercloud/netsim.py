"""Deterministic discrete-event network.

Every node is a callable that receives :class:`Envelope` objects.  Links are
directed, FIFO, and serialize one envelope at a time at ``rate`` bits per
second before adding a fixed propagation ``latency``.  All chance (loss and
duplication draws) comes from one seeded ``random.Random``, and events with
equal timestamps are ordered by their enqueue sequence number, so a seed
fixes the whole event order.

Adversary hooks sit on links and see every envelope before the loss draw.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from . import wire
from .errors import HookAlreadyInstalled, UnknownLink


@dataclass(frozen=True)
class LinkModel:
    rate: float = 64e6  # bits per second
    latency: float = 0.0
    loss_prob: float = 0.0
    dup_prob: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("link rate must be positive")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        for p in (self.loss_prob, self.dup_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    def transmission_time(self, size: int) -> float:
        return size * 8 / self.rate


@dataclass
class Envelope:
    src: str
    dst: str
    payload: bytes = field(repr=False)
    size: Optional[int] = None  # wire size in bytes; defaults to len(payload)
    send_time: float = 0.0
    deliver_at: float = 0.0

    def __post_init__(self):
        if self.size is None:
            self.size = len(self.payload)

    @property
    def kind(self) -> str:
        return wire.kind_of(self.payload)

    def copy(self, **changes) -> "Envelope":
        fields = dict(src=self.src, dst=self.dst, payload=self.payload, size=self.size)
        fields.update(changes)
        return Envelope(**fields)


# -- adversary verdicts -------------------------------------------------------


@dataclass(frozen=True)
class Pass:
    pass


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Modify:
    payload: bytes


@dataclass(frozen=True)
class Redirect:
    dst: str


@dataclass(frozen=True)
class Inject:
    """Send ``envelopes`` as well; the intercepted one passes unless ``drop_original``."""

    envelopes: tuple
    drop_original: bool = False


Verdict = Union[Pass, Drop, Modify, Redirect, Inject]
Hook = Callable[[Envelope, "Network"], Verdict]


@dataclass
class Link:
    src: str
    dst: str
    model: LinkModel
    busy_until: float = 0.0
    hook: Optional[Hook] = None


class Trace:
    """Ordered protocol event records, exportable as JSON lines."""

    def __init__(self):
        self.records: list[dict] = []

    def emit(self, time: float, actor: str, event: str, request_id: str = "", **detail) -> None:
        rec = {"sim_time": time, "actor": actor, "event": event, "request_id": request_id}
        if detail:
            rec["detail"] = {k: str(v) for k, v in detail.items()}
        self.records.append(rec)

    def kinds(self, actor: Optional[str] = None) -> list[str]:
        return [r["event"] for r in self.records if actor is None or r["actor"] == actor]

    def count(self, event: str) -> int:
        return sum(1 for r in self.records if r["event"] == event)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


class Timer:
    __slots__ = ("at", "fn", "args", "cancelled", "label")

    def __init__(self, at, fn, args, label):
        self.at, self.fn, self.args, self.label = at, fn, args, label
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # "deliver" | "timer"
    envelope: Optional[Envelope] = None
    label: str = ""


@dataclass
class NetStats:
    sends: int = 0
    duplicates: int = 0
    drops: int = 0
    deliveries: int = 0

    def conserved(self, in_flight: int) -> bool:
        return self.drops + self.deliveries + in_flight == self.sends + self.duplicates


class Network:
    def __init__(self, rng: random.Random, trace: Optional[Trace] = None, *, record_wire: bool = False):
        self.rng = rng
        self.trace = trace if trace is not None else Trace()
        self.now = 0.0
        self.nodes: dict[str, Callable[[Envelope], None]] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.stats = NetStats()
        self.record_wire = record_wire
        self.wire_log: list[tuple[float, str, str, bytes]] = []
        self._queue: list = []
        self._seq = 0
        self._in_flight = 0

    # -- topology -------------------------------------------------------------

    def add_node(self, addr: str, handler: Callable[[Envelope], None]) -> None:
        self.nodes[addr] = handler

    def add_link(self, a: str, b: str, model: LinkModel, *, both: bool = True) -> None:
        self.links[(a, b)] = Link(a, b, model)
        if both:
            self.links[(b, a)] = Link(b, a, model)

    def link(self, src: str, dst: str) -> Link:
        try:
            return self.links[(src, dst)]
        except KeyError:
            raise UnknownLink(f"{src} -> {dst}") from None

    def interpose(self, links: Iterable[tuple[str, str]], hook: Hook) -> None:
        targets = [self.link(s, d) for s, d in links]
        for ln in targets:
            if ln.hook is not None:
                raise HookAlreadyInstalled(f"{ln.src} -> {ln.dst}")
        for ln in targets:
            ln.hook = hook

    # -- sending --------------------------------------------------------------

    def send(self, env: Envelope) -> None:
        ln = self.link(env.src, env.dst)
        env.send_time = self.now
        self.stats.sends += 1
        if self.record_wire:
            self.wire_log.append((self.now, env.src, env.dst, env.payload))
        if ln.hook is not None:
            verdict = ln.hook(env, self)
            if not self._apply_verdict(env, ln, verdict):
                return
        m = ln.model
        lost = self._draw(m.loss_prob)
        duplicated = not lost and self._draw(m.dup_prob)
        deliver_at = self._serialize(ln, env.size)
        if lost:
            self.stats.drops += 1
            self.trace.emit(self.now, env.src, "net-loss", "", kind=env.kind, dst=env.dst)
            return
        self._enqueue_delivery(env, deliver_at)
        if duplicated:
            self.stats.duplicates += 1
            self._enqueue_delivery(env.copy(), deliver_at)

    def _apply_verdict(self, env: Envelope, ln: Link, verdict: Verdict) -> bool:
        """Mutate ``env`` per the verdict; False means it goes no further."""
        if verdict is None or isinstance(verdict, Pass):
            return True
        if isinstance(verdict, Drop):
            self.stats.drops += 1
            self.trace.emit(self.now, env.src, "adversary-drop", "", kind=env.kind, dst=env.dst)
            return False
        if isinstance(verdict, Modify):
            resized = env.size == len(env.payload)
            env.payload = verdict.payload
            if resized:
                env.size = len(verdict.payload)
            self.trace.emit(self.now, env.src, "adversary-modify", "", kind=env.kind, dst=env.dst)
            return True
        if isinstance(verdict, Redirect):
            self.trace.emit(self.now, env.src, "adversary-redirect", "", kind=env.kind, dst=verdict.dst)
            env.dst = verdict.dst
            return True
        if isinstance(verdict, Inject):
            for extra in verdict.envelopes:
                self.inject(extra, via=ln)
            if verdict.drop_original:
                self.stats.drops += 1
                self.trace.emit(self.now, env.src, "adversary-drop", "", kind=env.kind, dst=env.dst)
                return False
            return True
        raise TypeError(f"unknown verdict {verdict!r}")

    def inject(self, env: Envelope, via: Optional[Link] = None) -> None:
        """Attacker-originated send: bypasses hooks and chance."""
        ln = self.links.get((env.src, env.dst)) or via
        if ln is None:
            raise UnknownLink(f"{env.src} -> {env.dst}")
        env.send_time = self.now
        self.stats.sends += 1
        if self.record_wire:
            self.wire_log.append((self.now, env.src, env.dst, env.payload))
        self.trace.emit(self.now, env.src, "adversary-inject", "", kind=env.kind, dst=env.dst)
        self._enqueue_delivery(env, self._serialize(ln, env.size))

    def _draw(self, p: float) -> bool:
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.rng.random() < p

    def _serialize(self, ln: Link, size: int) -> float:
        start = max(self.now, ln.busy_until)
        ln.busy_until = start + ln.model.transmission_time(size)
        return ln.busy_until + ln.model.latency

    def _enqueue_delivery(self, env: Envelope, at: float) -> None:
        env.deliver_at = at
        self._in_flight += 1
        self._push(at, "deliver", env)

    def _push(self, at: float, kind: str, obj) -> None:
        heapq.heappush(self._queue, (at, self._seq, kind, obj))
        self._seq += 1

    # -- timers and the loop --------------------------------------------------

    def schedule(self, delay: float, fn: Callable, *args, label: str = "") -> Timer:
        t = Timer(self.now + max(delay, 0.0), fn, args, label)
        self._push(t.at, "timer", t)
        return t

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def idle(self) -> bool:
        return not any(k == "deliver" or not obj.cancelled for _, _, k, obj in self._queue)

    def step(self) -> Optional[Event]:
        while self._queue:
            at, _, kind, obj = heapq.heappop(self._queue)
            if kind == "timer" and obj.cancelled:
                continue
            self.now = at
            if kind == "deliver":
                self._in_flight -= 1
                self.stats.deliveries += 1
                handler = self.nodes.get(obj.dst)
                if handler is not None:
                    handler(obj)
                return Event(at, "deliver", obj)
            obj.fn(*obj.args)
            return Event(at, "timer", label=obj.label)
        return None

    def run(self, *, max_events: Optional[int] = None, after_event: Optional[Callable[[Event], None]] = None) -> int:
        n = 0
        while max_events is None or n < max_events:
            ev = self.step()
            if ev is None:
                break
            n += 1
            if after_event is not None:
                after_event(ev)
        return n
