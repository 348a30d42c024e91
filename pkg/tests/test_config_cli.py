from __future__ import annotations

import csv
import json

import pytest
import yaml

from intercloud.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from intercloud.config import PUBLISHED_SIZES, load_config, parse_config
from intercloud.errors import ConfigError
from intercloud.metrics import MB

SMALL = {"clusters": {"block_size": 1024}, "protocol": {"kdf_cost": 16}, "file_size": 2048}


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if name.endswith(".json") else yaml.safe_dump(doc))
    return p


def test_defaults_and_size_strings():
    cfg = parse_config({"file_sizes": ["1MB", "2 MB"], "clusters": {"block_size": "1KB"}})
    assert cfg.file_sizes == [MB, 2 * MB] and cfg.clusters.block_size == 1000
    assert load_config(None).file_sizes == list(PUBLISHED_SIZES)


@pytest.mark.parametrize(
    "doc",
    [
        {"seed": -1},
        {"link": {"loss_prob": 1.5}},
        {"protocol": {"kdf_cost": 6}},
        {"variants": ["mystery"]},
        {"file_sizes": []},
        {"scenarios": ["nope"]},
        {"unexpected": 1},
        [1, 2],
    ],
)
def test_invalid_configs_raise_config_error(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_load_yaml_and_json(tmp_path):
    assert load_config(_write(tmp_path, SMALL)).file_size == 2048
    assert load_config(_write(tmp_path, SMALL, "cfg.json")).file_size == 2048
    (tmp_path / "broken.yaml").write_text("a: [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def _cli(tmp_path, cmd, doc, *extra, out="out"):
    cfg = _write(tmp_path, doc)
    return main([cmd, "--config", str(cfg), "--out-dir", str(tmp_path / out), *extra])


def test_migrate_happy_path(tmp_path):
    assert _cli(tmp_path, "migrate", SMALL) == EXIT_OK
    lines = (tmp_path / "out" / "trace.jsonl").read_text().splitlines()
    assert "migration-complete" in [json.loads(l)["event"] for l in lines[-3:]]
    rows = list(csv.DictReader((tmp_path / "out" / "migrate.csv").open()))
    assert len(rows) == 2 and {r["status"] for r in rows} == {"acked-deleted"}


def test_migrate_drop_all_fails_with_alert_and_retained_blocks(tmp_path):
    doc = {**SMALL, "link": {"loss_prob": 1.0}}
    assert _cli(tmp_path, "migrate", doc, "--format", "structured") == EXIT_FAILURE
    fail = json.loads((tmp_path / "out" / "failure.json").read_text())
    assert fail["exit"] == EXIT_FAILURE and fail["outcome"]["alerts"]
    report = json.loads((tmp_path / "out" / "migrate.json").read_text())
    assert all(b["at_source"] for b in report["blocks"])


def test_migrate_drop_data_only_gives_source_alert(tmp_path):
    doc = {**SMALL, "link": {"loss_prob": 1.0}, "reverse_link": {}}
    assert _cli(tmp_path, "migrate", doc, "--format", "structured") == EXIT_FAILURE
    kinds = {a[1] for a in json.loads((tmp_path / "out" / "migrate.json").read_text())["outcome"]["alerts"]}
    assert "source-max-retransmit" in kinds


def test_usage_errors_are_distinct(tmp_path, capsys):
    assert _cli(tmp_path, "migrate", {"seed": -3}) == EXIT_USAGE
    err = json.loads(capsys.readouterr().err)
    assert err["exit"] == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["attack", "--scenario", "nope", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["migrate", "--format", "xml"]) == EXIT_USAGE


def test_bench_full_and_single(tmp_path):
    assert _cli(tmp_path, "bench", {}, "--format", "structured") == EXIT_OK
    doc = json.loads((tmp_path / "out" / "bench.json").read_text())
    assert len(doc["records"]) == 24 and doc["ordering_holds"]
    assert _cli(tmp_path, "bench", {"file_sizes": ["1MB"], "variants": ["proposed"]}, out="one") == EXIT_OK
    rows = list(csv.reader((tmp_path / "one" / "bench.csv").open()))
    assert len(rows) == 2


def test_bench_desk_scale(tmp_path):
    doc = {"file_sizes": [s // 100 for s in PUBLISHED_SIZES]}
    assert _cli(tmp_path, "bench", doc, "--format", "structured") == EXIT_OK
    recs = json.loads((tmp_path / "out" / "bench.json").read_text())["records"]
    for v in ("proposed", "secdm3", "secured2"):
        d = [r["degradation"] for r in recs if r["method"] == v]
        # single-block files all degrade by the same fraction; allow rounding
        assert all(b >= a - 1e-12 for a, b in zip(d, d[1:]))


def test_attack_all_pass_and_pass_through_matches_migrate(tmp_path, capsys):
    assert _cli(tmp_path, "attack", SMALL) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 11 and "FAIL" not in out
    assert _cli(tmp_path, "migrate", SMALL, out="m") == EXIT_OK
    assert (tmp_path / "out" / "trace-pass-through.jsonl").read_text().count("migration-complete") == 1
    rows = {r["scenario"]: r for r in csv.DictReader((tmp_path / "out" / "attack.csv").open())}
    assert rows["pass-through"]["complete"] == "1"


def test_attack_scenario_override(tmp_path, capsys):
    assert _cli(tmp_path, "attack", SMALL, "--scenario", "tamper-data") == EXIT_OK
    assert capsys.readouterr().out.strip() == "PASS tamper-data"


def test_outputs_byte_identical_across_runs(tmp_path):
    doc = {**SMALL, "link": {"loss_prob": 0.3, "dup_prob": 0.2}, "seed": 42}
    for cmd in ("migrate", "attack"):
        for fmt in ("csv", "structured"):
            _cli(tmp_path, cmd, doc, "--format", fmt, out=f"{cmd}-{fmt}-1")
            _cli(tmp_path, cmd, doc, "--format", fmt, out=f"{cmd}-{fmt}-2")
            a, b = tmp_path / f"{cmd}-{fmt}-1", tmp_path / f"{cmd}-{fmt}-2"
            names = sorted(p.name for p in a.iterdir())
            assert names == sorted(p.name for p in b.iterdir())
            for n in names:
                assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_flag_overrides_config(tmp_path):
    doc = {**SMALL, "link": {"loss_prob": 0.3}}
    _cli(tmp_path, "migrate", doc, "--seed", "1", out="s1")
    _cli(tmp_path, "migrate", doc, "--seed", "2", out="s2")
    assert (tmp_path / "s1" / "trace.jsonl").read_bytes() != (tmp_path / "s2" / "trace.jsonl").read_bytes()
