"""Scripted man-in-the-middle scenarios against a migration.

The attacker is a Dolev-Yao node called ``mallory``.  It sits on interposed
links where it can read, drop, modify, redirect and inject frames, and it has
its own address on the network.  It holds no key material beyond guesses of
its own.  After a run, it tries every captured sealed item against every
candidate key it has; whatever opens goes into ``derived_plaintexts``.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

from . import wire
from .core import (
    ACKED_DELETED,
    SOURCE_MAX_RETRANSMIT,
    TARGET_DUPLICATE_FLOOD,
    AckMsg,
    BlockAccessToken,
    BlockId,
    DataMsg,
)
from .crypto import KEY_SIZE, SealedBox, derive_key, open_box, seal
from .errors import AuthFailure, ConfigError, MalformedMessage, MigrationError
from .netsim import Drop, Envelope, Inject, Modify, Pass, Redirect
from .protocol import USER, CustodyViolation, MigrationEngine, prepare_engine

ATTACKER = "mallory"
PASSWORD_GUESSES = (b"password", b"123456", b"letmein")

Links = list[tuple[str, str]]
Hook = Callable[[Envelope, object], object]


class Attacker:
    def __init__(self, engine: MigrationEngine, address: str = ATTACKER):
        self.engine = engine
        self.address = address
        self.rng = random.Random(f"{engine.seed}/{address}")
        self.captured: list[tuple[float, str, str, bytes]] = []
        self.inbox: list[Envelope] = []
        self.keys = [bytes(KEY_SIZE), self.rng.randbytes(KEY_SIZE), self.rng.randbytes(KEY_SIZE)]
        self.keys += [derive_key(pw, b"", cost=engine.config.kdf_cost) for pw in PASSWORD_GUESSES]
        self.own_key = self.keys[1]
        self.notes: dict[str, object] = {}
        self.on_receive: Optional[Callable[[Envelope], None]] = None
        peers = [engine.source_nn.address, engine.target_nn.address]
        peers += [dn.address for dn in engine.source.datanodes + engine.target.datanodes]
        engine.add_node(address, self._receive, links=tuple(peers))

    def capture(self, env: Envelope) -> None:
        self.captured.append((self.engine.net.now, env.src, env.dst, env.payload))

    def _receive(self, env: Envelope) -> None:
        self.capture(env)
        self.inbox.append(env)
        if self.on_receive is not None:
            self.on_receive(env)

    def envelope(self, dst: str, payload: bytes, src: Optional[str] = None) -> Envelope:
        return Envelope(src or self.address, dst, payload)

    def send(self, dst: str, msg, src: Optional[str] = None) -> None:
        self.engine.net.inject(self.envelope(dst, wire.encode(msg), src), via=self.engine.net.links.get((dst, self.address)))

    # -- what the attacker can learn ------------------------------------------

    def analyse(self) -> dict:
        attempts, derived = 0, []
        for _, src, dst, raw in self.captured:
            try:
                msg = wire.decode(raw)
            except MalformedMessage:
                continue
            for label, box, aad in sealed_items(msg):
                for key in self.keys:
                    attempts += 1
                    try:
                        open_box(key, box, aad)
                    except AuthFailure:
                        continue
                    derived.append(label)
        key_material = _session_key_material(self.engine)
        exposed = any(k in raw for k in key_material for _, _, _, raw in self.captured)
        blocks_captured, owner_plain = 0, False
        for _, _, _, raw in self.captured:
            if wire.kind_of(raw) == "data":
                blocks_captured += 1
                owner_plain = owner_plain or not self._owner_encrypted()
        return {
            "captured_messages": len(self.captured),
            "captured_bytes": sum(len(r) for *_, r in self.captured),
            "open_attempts": attempts,
            "derived_plaintexts": derived,
            "key_exposed": exposed,
            "data_blocks_captured": blocks_captured,
            "owner_plaintext_exposed": owner_plain,
        }

    def _owner_encrypted(self) -> bool:
        files = list(self.engine.source.namenode.files.values()) + list(self.engine.target.namenode.files.values())
        return all(m.owner_encrypted for m in files)


def _session_key_material(engine: MigrationEngine) -> list[bytes]:
    seen = set()
    for u in engine.users.values():
        seen.update(st.key.material for st in u.setups.values())
    for nn in (engine.source.namenode, engine.target.namenode):
        seen.update(k.material for k in nn.session_keys.values())
        seen.update(k.material for k in nn.pending_keys.values())
    return sorted(seen)


def sealed_items(msg) -> list[tuple[str, SealedBox, bytes]]:
    """Every sealed box in ``msg`` with the associated data the protocol would use."""
    sid = getattr(msg, "session_id", "")
    if isinstance(msg, wire.KeyDelivery):
        return [("key-wrap", msg.wrapped_key, wire.key_wrap_aad(sid, msg.cloud_id, msg.user_id))]
    if isinstance(msg, wire.KeySetupReply):
        if not msg.ok:
            return []
        try:
            box = SealedBox.from_bytes(msg.proof)
        except MalformedMessage:
            return []
        return [("key-setup-proof", box, wire.setup_reply_aad(sid, msg.cloud_id))]
    if isinstance(msg, wire.KeyCommit):
        return [("key-commit", msg.proof, wire.commit_aad(sid))]
    if isinstance(msg, wire.KeyAbort):
        return [("key-abort", msg.proof, wire.abort_aad(sid))]
    if isinstance(msg, wire.MigrateRequest):
        return [("trigger", msg.sealed_file_id, wire.trigger_aad(sid))]
    if isinstance(msg, wire.MetadataMsg):
        return [("metadata", msg.sealed_metadata, wire.metadata_aad(sid))]
    if isinstance(msg, wire.ReadRequest):
        return [("token", msg.sealed_token, wire.token_aad(sid))]
    if isinstance(msg, wire.TokenShare):
        return [("token", msg.sealed_token, wire.token_aad(sid))]
    if isinstance(msg, DataMsg):
        return [("data-hash", msg.sealed_hash, wire.hash_aad(sid, msg.request_id))]
    if isinstance(msg, AckMsg):
        return [("ack-receipt", msg.sealed_receipt, wire.ack_aad(sid, msg.request_id))]
    return []


def flip_bit(raw: bytes, position: int) -> bytes:
    out = bytearray(raw)
    out[position // 8 % len(out)] ^= 1 << (position % 8)
    return bytes(out)


# ---------------------------------------------------------------------------
# link groups


def forward_data_links(e: MigrationEngine) -> Links:
    return [(s.address, t.address) for s in e.source.datanodes for t in e.target.datanodes]


def reverse_data_links(e: MigrationEngine) -> Links:
    return [(t, s) for s, t in forward_data_links(e)]


def control_links(e: MigrationEngine) -> Links:
    a, b = e.source_nn.address, e.target_nn.address
    return [(a, b), (b, a)]


def user_links(e: MigrationEngine) -> Links:
    out = []
    for u in e.users.values():
        for nn in (e.source_nn.address, e.target_nn.address):
            out += [(u.address, nn), (nn, u.address)]
    return out


def inter_cloud_links(e: MigrationEngine) -> Links:
    return forward_data_links(e) + reverse_data_links(e) + control_links(e) + user_links(e)


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class ScenarioReport:
    name: str
    passed: bool
    failures: list[str]
    complete: bool
    aborted: bool
    custody_holds: bool
    blocks_total: int
    blocks_transferred: int
    blocks_deleted: int
    data_transmissions: int
    max_transmissions_per_block: int
    alerts: list[list]
    security_events: list[str]
    captured_messages: int
    captured_bytes: int
    open_attempts: int
    derived_plaintexts: list[str]
    key_exposed: bool
    data_blocks_captured: int
    owner_plaintext_exposed: bool
    max_copies: int = 0
    notes: dict = field(default_factory=dict)

    def alert_kinds(self) -> list[str]:
        return [a[1] for a in self.alerts]

    def to_dict(self) -> dict:
        return asdict(self)


Check = Callable[[ScenarioReport], list[str]]


@dataclass
class AttackScenario:
    """``hooks`` builds (links, hook) pairs for a given engine and attacker.

    ``insider`` replaces the user-initiated key setup and trigger when set.
    """

    name: str
    hooks: Callable[[MigrationEngine, Attacker], list[tuple[Links, Hook]]]
    expected_outcome: Check
    description: str = ""
    insider: Optional[Callable[[MigrationEngine, Attacker], None]] = None
    after: Optional[Callable[[MigrationEngine, Attacker], None]] = None


def _expect(**conds) -> Check:
    """Build a check from named predicates over the report."""

    def check(r: ScenarioReport) -> list[str]:
        return [name for name, pred in conds.items() if not pred(r)]

    return check


def _baseline_checks(r: ScenarioReport) -> list[str]:
    out = []
    if not r.custody_holds:
        out.append("custody invariant")
    if r.derived_plaintexts:
        out.append("attacker derived plaintexts")
    if r.key_exposed:
        out.append("K_t exposed on the wire")
    return out


def _no_hooks(e, a):
    return []


def _eavesdrop(e: MigrationEngine, a: Attacker):
    def hook(env, net):
        a.capture(env)
        return Pass()

    return [(inter_cloud_links(e), hook)]


def _diversion(e: MigrationEngine, a: Attacker):
    """Mallory poses as the target data node: read requests reach the source from her address."""

    def hook(env, net):
        a.capture(env)
        if env.kind == "read-request":
            relay = a.envelope(env.dst, env.payload)
            return Inject((relay,), drop_original=True)
        return Pass()

    def on_data(env: Envelope):
        if env.kind != "data":
            return
        msg = wire.decode(env.payload)
        # best effort: an ack sealed under a key she does have
        receipt = wire.encode_receipt(bytes(32), msg.block_id, msg.request_id)
        forged = AckMsg(msg.session_id, msg.request_id, seal(a.own_key, receipt, wire.ack_aad(msg.session_id, msg.request_id), a.rng))
        a.send(env.src, forged)

    a.on_receive = on_data
    return [(reverse_data_links(e), hook)]


def _drop_kind(kind: str, links_of):
    def build(e: MigrationEngine, a: Attacker):
        def hook(env, net):
            a.capture(env)
            return Drop() if env.kind == kind else Pass()

        return [(links_of(e), hook)]

    return build


def _forged_ack(e: MigrationEngine, a: Attacker):
    """Swallow genuine acks; substitute one forged and one bit-flipped copy."""
    counter = [0]

    def hook(env, net):
        a.capture(env)
        if env.kind != "ack":
            return Pass()
        msg = wire.decode(env.payload)
        counter[0] += 1
        receipt = wire.encode_receipt(bytes(32), BlockId("?", 0), msg.request_id)
        forged = AckMsg(msg.session_id, msg.request_id, seal(a.own_key, receipt, wire.ack_aad(msg.session_id, msg.request_id), a.rng))
        box = msg.sealed_receipt
        flipped = AckMsg(msg.session_id, msg.request_id, SealedBox(box.nonce, flip_bit(box.ciphertext, counter[0] * 7), box.tag))
        extra = tuple(a.envelope(env.dst, wire.encode(m), src=env.src) for m in (forged, flipped))
        return Inject(extra, drop_original=True)

    return [(reverse_data_links(e), hook)]


def _replay(e: MigrationEngine, a: Attacker):
    """Replay every data frame and, once acked, the read requests too."""
    data_frames: list[Envelope] = []
    requests: list[Envelope] = []

    def forward(env, net):
        a.capture(env)
        if env.kind == "data":
            data_frames.append(env.copy())
            return Inject((a.envelope(env.dst, env.payload),))
        return Pass()

    def reverse(env, net):
        a.capture(env)
        if env.kind == "read-request":
            requests.append(env.copy())
        return Pass()

    def after(engine, att):
        for env in data_frames:
            att.engine.net.inject(att.envelope(env.dst, env.payload))
        for env in requests:
            att.engine.net.inject(att.envelope(env.dst, env.payload))
        att.notes["replayed_data"] = len(data_frames)
        att.notes["replayed_requests"] = len(requests)

    a.notes["_after"] = after
    return [(forward_data_links(e), forward), (reverse_data_links(e), reverse)]


def _replay_after(e, a):
    hook = a.notes.pop("_after", None)
    if hook is not None:
        transmissions_before = e.data_transmissions()
        hook(e, a)
        e.run()
        a.notes["retransmissions_after_replay"] = e.data_transmissions() - transmissions_before


def _impersonate_target(e: MigrationEngine, a: Attacker):
    """Mallory presents herself to the source as the target name node."""

    def hook(env, net):
        a.capture(env)
        if env.kind == "metadata":
            return Redirect(a.address)
        return Pass()

    def on_metadata(env: Envelope):
        if env.kind != "metadata":
            return
        msg = wire.decode(env.payload)
        opened = False
        for key in a.keys:
            try:
                open_box(key, msg.sealed_metadata, wire.metadata_aad(msg.session_id))
                opened = True
            except AuthFailure:
                pass
        a.notes["metadata_opened"] = opened
        # without the metadata she can only guess block ids, and mint tokens under her own key
        for dn in e.source.datanodes:
            for idx in range(2):
                token = BlockAccessToken(BlockId("f", idx), a.address, f"r-mallory-{idx}", 1e9)
                box = seal(a.own_key, wire.encode_token(token), wire.token_aad(msg.session_id), a.rng)
                a.send(dn.address, wire.ReadRequest(msg.session_id, box))

    a.on_receive = on_metadata
    return [([(e.source_nn.address, e.target_nn.address)], hook)]


def _substitute_metadata(e: MigrationEngine, a: Attacker):
    def hook(env, net):
        a.capture(env)
        if env.kind == "metadata":
            msg = wire.decode(env.payload)
            box = msg.sealed_metadata
            bogus = SealedBox(box.nonce, a.rng.randbytes(len(box.ciphertext)), box.tag)
            return Modify(wire.encode(wire.MetadataMsg(msg.session_id, bogus)))
        return Pass()

    return [(control_links(e), hook)]


def _tamper_data(e: MigrationEngine, a: Attacker):
    """Flip one payload bit in the first copy of each data frame."""
    seen: set[str] = set()

    def hook(env, net):
        a.capture(env)
        if env.kind != "data":
            return Pass()
        msg = wire.decode(env.payload)
        if msg.request_id in seen or not msg.data:
            return Pass()
        seen.add(msg.request_id)
        bad = DataMsg(msg.session_id, msg.request_id, msg.block_id, flip_bit(msg.data, 3), msg.nonce, msg.sealed_hash, msg.attempt)
        return Modify(wire.encode(bad))

    return [(forward_data_links(e), hook)]


def _unauthorized_trigger(e: MigrationEngine, a: Attacker) -> None:
    """An insider tries to start a migration without the user's key setup."""
    fake_sid = "s-insider"
    try:
        e.start_migration(fake_sid, "f")
        a.notes["direct_start"] = "accepted"
    except MigrationError as exc:
        a.notes["direct_start"] = type(exc).__name__
    trigger = seal(a.own_key, b"f", wire.trigger_aad(fake_sid), a.rng)
    a.send(e.source_nn.address, wire.MigrateRequest(fake_sid, trigger))
    meta = e.source.metadata("f")
    sealed = seal(a.own_key, wire.encode_metadata(meta), wire.metadata_aad(fake_sid), a.rng)
    a.send(e.target_nn.address, wire.MetadataMsg(fake_sid, sealed))
    e.run()


def _no_transfer(r: ScenarioReport) -> bool:
    return r.blocks_transferred == 0 and r.blocks_deleted == 0


def _builtins() -> dict[str, AttackScenario]:
    return {
        s.name: s
        for s in (
            AttackScenario(
                "pass-through",
                _no_hooks,
                _expect(completes=lambda r: r.complete, all_deleted=lambda r: r.blocks_deleted == r.blocks_total),
                "No attacker; the control run.",
            ),
            AttackScenario(
                "passive-eavesdrop",
                _eavesdrop,
                _expect(
                    completes=lambda r: r.complete,
                    captured_something=lambda r: r.captured_messages > 0,
                    nothing_derived=lambda r: not r.derived_plaintexts,
                ),
                "Record every inter-cloud and user frame, including key setup; try every key guess.",
            ),
            AttackScenario(
                "diversion",
                _diversion,
                _expect(
                    attacker_got_data=lambda r: r.data_blocks_captured > 0,
                    zero_deletions=lambda r: r.blocks_deleted == 0,
                    source_alert=lambda r: SOURCE_MAX_RETRANSMIT in r.alert_kinds(),
                    blocks_retained=lambda r: r.blocks_transferred == 0,
                ),
                "Read requests are relayed from the attacker's address so data flows to her.",
            ),
            AttackScenario(
                "drop-all-data",
                _drop_kind("data", forward_data_links),
                _expect(
                    exact_bound=lambda r: r.max_transmissions_per_block == r.notes["max_ret"] + 1,
                    every_block_bounded=lambda r: r.data_transmissions == r.blocks_total * (r.notes["max_ret"] + 1),
                    source_alert=lambda r: SOURCE_MAX_RETRANSMIT in r.alert_kinds(),
                    zero_deletions=lambda r: r.blocks_deleted == 0,
                ),
                "Every data frame is dropped in transit.",
            ),
            AttackScenario(
                "drop-all-acks",
                _drop_kind("ack", reverse_data_links),
                _expect(
                    target_alert=lambda r: TARGET_DUPLICATE_FLOOD in r.alert_kinds(),
                    copies_reach_bound=lambda r: r.max_copies == r.notes["max_ret"] + 1,
                    source_alert=lambda r: SOURCE_MAX_RETRANSMIT in r.alert_kinds(),
                    zero_deletions=lambda r: r.blocks_deleted == 0,
                ),
                "Every acknowledgment is dropped; data arrives but the source never hears back.",
            ),
            AttackScenario(
                "forged-ack",
                _forged_ack,
                _expect(
                    zero_deletions=lambda r: r.blocks_deleted == 0,
                    forgeries_detected=lambda r: "forged-ack" in r.security_events,
                    source_alert=lambda r: SOURCE_MAX_RETRANSMIT in r.alert_kinds(),
                ),
                "Genuine acks are replaced by one forged and one bit-flipped ack.",
            ),
            AttackScenario(
                "replayed-datamsg",
                _replay,
                _expect(
                    completes=lambda r: r.complete,
                    duplicates_counted=lambda r: r.max_copies >= 2,
                    no_resend_on_replayed_request=lambda r: r.notes.get("retransmissions_after_replay") == 0,
                ),
                "Data frames are replayed by the attacker during and after the migration; read requests after.",
                after=_replay_after,
            ),
            AttackScenario(
                "impersonate-target",
                _impersonate_target,
                _expect(
                    metadata_unreadable=lambda r: r.notes.get("metadata_opened") is False,
                    no_transfer=_no_transfer,
                    tokens_rejected=lambda r: "token-auth-failure" in r.security_events,
                ),
                "The metadata is redirected to the attacker, who mints her own tokens.",
            ),
            AttackScenario(
                "substitute-metadata",
                _substitute_metadata,
                _expect(
                    aborted=lambda r: r.aborted,
                    detected=lambda r: "metadata-auth-failure" in r.security_events,
                    no_transfer=_no_transfer,
                ),
                "The metadata ciphertext is replaced in transit.",
            ),
            AttackScenario(
                "tamper-data",
                _tamper_data,
                _expect(
                    completes=lambda r: r.complete,
                    detected=lambda r: "integrity-failure" in r.security_events,
                    retransmitted=lambda r: r.data_transmissions > r.blocks_total,
                ),
                "One bit of each block's first copy is flipped in transit.",
            ),
            AttackScenario(
                "unauthorized-trigger",
                _no_hooks,
                _expect(
                    rejected_directly=lambda r: r.notes.get("direct_start") == "UnknownSession",
                    detected=lambda r: "unknown-session" in r.security_events,
                    no_transfer=_no_transfer,
                ),
                "An insider starts a migration without a key setup by the user.",
                insider=_unauthorized_trigger,
            ),
        )
    }


SCENARIOS: dict[str, AttackScenario] = _builtins()


# ---------------------------------------------------------------------------
# running


def run_scenario(engine: MigrationEngine, scenario: AttackScenario) -> ScenarioReport:
    """Run one migration under ``scenario`` on a prepared engine."""
    attacker = Attacker(engine)
    for links, hook in scenario.hooks(engine, attacker):
        engine.net.interpose(links, hook)
    custody = True
    session_id = None
    try:
        if scenario.insider is not None:
            scenario.insider(engine, attacker)
        else:
            session_id = engine.key_setup(USER)
            engine.migrate(USER, session_id, next(iter(engine.source.namenode.files)))
        if scenario.after is not None:
            scenario.after(engine, attacker)
    except CustodyViolation:
        custody = False
    return _report(engine, attacker, scenario, session_id, custody)


def _report(engine, attacker, scenario, session_id, custody) -> ScenarioReport:
    ledgers = list(engine.ledgers.values()) if session_id is None else [engine.ledger_for(session_id)]
    status = {b: s for led in ledgers for b, s in led.status.items()}
    transmissions = [n for led in ledgers for n in led.transmissions.values()]
    copies = [n for dn in engine.target_dns for n in dn.copies.values()]
    knowledge = attacker.analyse()
    transferred = sum(1 for b in status if engine.target.locate(b) is not None)
    alerts = [[a.cloud_id, a.kind, a.request_id, a.sim_time] for led in ledgers for a in led.alerts]
    notes = {k: v for k, v in attacker.notes.items() if not k.startswith("_")}
    notes["max_ret"] = engine.config.max_ret
    report = ScenarioReport(
        name=scenario.name,
        passed=False,
        failures=[],
        complete=bool(ledgers) and all(led.complete for led in ledgers),
        aborted=any(led.aborted for led in engine.ledgers.values()),
        custody_holds=custody and engine.custody_holds(),
        blocks_total=len(status),
        blocks_transferred=transferred,
        blocks_deleted=sum(1 for s in status.values() if s == ACKED_DELETED),
        data_transmissions=sum(transmissions),
        max_transmissions_per_block=max(transmissions, default=0),
        alerts=alerts,
        security_events=[kind for _, _, kind in engine.security_events],
        max_copies=max(copies, default=0),
        notes=notes,
        **knowledge,
    )
    report.failures = _baseline_checks(report) + scenario.expected_outcome(report)
    report.passed = not report.failures
    return report


def load_scenarios(entries: Iterable) -> list[AttackScenario]:
    """Resolve config entries: a built-in name, or ``{name, attack}`` aliasing one."""
    out = []
    for entry in entries:
        if isinstance(entry, str):
            name, attack = entry, entry
        elif isinstance(entry, dict) and "name" in entry:
            name, attack = entry["name"], entry.get("attack", entry["name"])
        else:
            raise ConfigError(f"bad scenario entry {entry!r}")
        if attack not in SCENARIOS:
            raise ConfigError(f"unknown attack {attack!r}; known: {', '.join(sorted(SCENARIOS))}")
        base = SCENARIOS[attack]
        out.append(AttackScenario(name, base.hooks, base.expected_outcome, base.description, base.insider, base.after))
    return out


def scenarios_from_config(path) -> list[AttackScenario]:
    """Scenario list from a run-config file (the ``scenarios`` key)."""
    from .config import load_config

    return load_scenarios(load_config(path).scenario_entries())
