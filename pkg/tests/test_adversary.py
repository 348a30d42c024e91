from __future__ import annotations

import pytest

from conftest import make_engine
from intercloud import wire
from intercloud.adversary import SCENARIOS, Attacker, flip_bit, load_scenarios, run_scenario, sealed_items
from intercloud.core import SOURCE_MAX_RETRANSMIT, TARGET_DUPLICATE_FLOOD
from intercloud.errors import ConfigError
from intercloud.protocol import ProtocolConfig


def _run(name, seed=0, **kw):
    return run_scenario(make_engine(seed, **kw), SCENARIOS[name])


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenario_meets_expected_outcome(name):
    r = _run(name)
    assert r.passed, r.failures
    assert r.custody_holds
    assert not r.derived_plaintexts and not r.key_exposed and not r.owner_plaintext_exposed


@pytest.mark.parametrize("name", sorted(SCENARIOS))
@pytest.mark.parametrize("seed", [1, 2])
def test_scenarios_hold_across_seeds_and_sizes(name, seed):
    assert _run(name, seed, file_size=seed * 1500).passed


def test_eavesdropper_sees_key_setup_but_opens_nothing():
    r = _run("passive-eavesdrop")
    assert r.complete and r.captured_messages > 0 and r.open_attempts > 0
    assert r.derived_plaintexts == []


def test_diversion_gives_attacker_ciphertext_but_no_deletions():
    r = _run("diversion")
    assert r.data_blocks_captured > 0
    assert r.blocks_deleted == 0 and r.blocks_transferred == 0
    assert SOURCE_MAX_RETRANSMIT in r.alert_kinds()


def test_drop_all_data_exact_bound():
    r = _run("drop-all-data")
    assert r.max_transmissions_per_block == r.notes["max_ret"] + 1
    assert r.data_transmissions == r.blocks_total * (r.notes["max_ret"] + 1)


def test_drop_all_acks_target_alert_and_no_deletion():
    r = _run("drop-all-acks")
    assert TARGET_DUPLICATE_FLOOD in r.alert_kinds() and r.blocks_deleted == 0
    assert r.max_copies == r.notes["max_ret"] + 1


@pytest.mark.parametrize("max_ret", [1, 3, 7])
def test_bounds_follow_configured_max_ret(max_ret):
    cfg = ProtocolConfig(kdf_cost=16, max_ret=max_ret)
    for name in ("drop-all-data", "drop-all-acks", "forged-ack"):
        r = _run(name, protocol=cfg)
        assert r.passed, (name, r.failures)
        assert r.max_transmissions_per_block == max_ret + 1


def test_unauthorized_trigger_moves_nothing():
    r = _run("unauthorized-trigger")
    assert r.blocks_transferred == 0 and r.blocks_deleted == 0 and r.data_transmissions == 0


def test_non_user_initiated_scenarios_transfer_nothing():
    for name in ("unauthorized-trigger", "impersonate-target", "substitute-metadata"):
        r = _run(name)
        assert r.blocks_transferred == 0, name


def test_attacker_has_no_session_key():
    e = make_engine()
    a = Attacker(e)
    assert all(len(k) == 32 for k in a.keys)
    r = run_scenario(e, SCENARIOS["pass-through"])
    assert r.passed and not r.derived_plaintexts


def test_sealed_items_cover_every_sealed_field():
    e = make_engine()
    run_scenario(e, SCENARIOS["passive-eavesdrop"])
    kinds = {wire.kind_of(raw) for *_, raw in e.net.wire_log}
    assert {"key-delivery", "metadata", "read-request", "data", "ack"} <= kinds
    for *_, raw in e.net.wire_log:
        msg = wire.decode(raw)
        for label, box, aad in sealed_items(msg):
            assert len(box.tag) == 16


def test_flip_bit_changes_exactly_one_bit():
    raw = bytes(8)
    out = flip_bit(raw, 13)
    assert sum(bin(a ^ b).count("1") for a, b in zip(raw, out)) == 1


def test_load_scenarios_aliases_and_rejects_unknown():
    (sc,) = load_scenarios([{"name": "my-drop", "attack": "drop-all-data"}])
    assert sc.name == "my-drop"
    with pytest.raises(ConfigError):
        load_scenarios(["nope"])
