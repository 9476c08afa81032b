"""Corpus generation: determinism, statistical shape, lossless re-ingestion,
anomaly injection."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ubad.errors import InvalidInputError
from ubad.ingest import ingest_paths
from ubad.synth import (
    CorpusSpec,
    RecordVolume,
    generate_corpus,
    inject_known_anomalies,
    load_manifest,
)


def small_spec(**overrides):
    base = dict(
        user_count=8,
        records_per_user=RecordVolume("uniform", 60, 80),
        separability="low",
        seed=31,
    )
    base.update(overrides)
    return CorpusSpec(**base)


def corpus_files(corpus_dir):
    manifest = load_manifest(corpus_dir)
    return [Path(corpus_dir) / f for f in manifest["files"]]


def test_generate_manifest_and_bounds(tmp_path):
    manifest = generate_corpus(small_spec(), tmp_path)
    assert len(manifest["users"]) == 8
    total = sum(u["count"] for u in manifest["users"])
    assert manifest["total_records"] == total
    assert 8 * 60 <= total <= 8 * 80
    assert (tmp_path / "logs.csv").exists()
    assert (tmp_path / "layout.json").exists()


def test_generate_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_corpus(small_spec(), a)
    generate_corpus(small_spec(), b)
    assert (a / "logs.csv").read_bytes() == (b / "logs.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    c = tmp_path / "c"
    generate_corpus(small_spec(seed=32), c)
    assert (a / "logs.csv").read_bytes() != (c / "logs.csv").read_bytes()


def test_generated_lines_have_42_columns(tmp_path):
    generate_corpus(small_spec(), tmp_path)
    with open(tmp_path / "logs.csv", newline="") as fh:
        for row in csv.reader(fh):
            assert len(row) == 42


def test_reingest_lossless(tmp_path):
    manifest = generate_corpus(small_spec(), tmp_path)
    store, stats = ingest_paths(corpus_files(tmp_path))
    assert stats.parsed == manifest["total_records"]
    assert stats.malformed == 0 and stats.bad_timestamp == 0
    assert stats.consistency_violations == 0
    assert store.counts() == {u["user_id"]: u["count"] for u in manifest["users"]}


def test_empirical_marginals_converge(tmp_path):
    # jitter off: this pins the law-of-large-numbers behaviour of the raw
    # sampler; per-user jitter preserves the marginals only in expectation
    spec = CorpusSpec(
        user_count=40,
        records_per_user=RecordVolume("uniform", 400, 500),
        separability="low",
        user_jitter=0.0,
        seed=5,
    )
    generate_corpus(spec, tmp_path)
    store, _ = ingest_paths(corpus_files(tmp_path))
    records = [r for u in store.users.values() for r in u]
    n = len(records)
    browser_freq = {}
    rule_freq = {}
    for r in records:
        browser_freq[r.browser] = browser_freq.get(r.browser, 0) + 1
        rule_freq[r.match_rule] = rule_freq.get(r.match_rule, 0) + 1
    for browser, p in spec.browser_marginals.items():
        assert abs(browser_freq.get(browser, 0) / n - p) < 0.02
    for rule, p in spec.match_rule_marginals.items():
        assert abs(rule_freq.get(rule, 0) / n - p) < 0.02


def test_browser_recovered_from_signature(tmp_path):
    # every generated device signature maps back to a known browser
    generate_corpus(small_spec(), tmp_path)
    store, _ = ingest_paths(corpus_files(tmp_path))
    browsers = {r.browser for u in store.users.values() for r in u}
    assert "UNKNOWN" not in browsers


def test_signature_consistency_rule_held(tmp_path):
    generate_corpus(small_spec(user_count=12), tmp_path)
    store, _ = ingest_paths(corpus_files(tmp_path))
    for u in store.users.values():
        for r in u:
            if r.device_check in ("YN", "YY"):
                assert r.signature_check == "Y"


def test_timestamps_inside_window(tmp_path):
    from datetime import datetime, timezone, timedelta
    generate_corpus(small_spec(), tmp_path)
    store, _ = ingest_paths(corpus_files(tmp_path))
    start = datetime(2014, 2, 15, tzinfo=timezone.utc)
    end = start + timedelta(days=89)
    for u in store.users.values():
        for r in u:
            assert start <= r.timestamp < end


def test_high_separability_distinct_profiles(tmp_path):
    manifest = generate_corpus(small_spec(separability="high", user_count=10), tmp_path)
    profiles = [
        (u["profile"]["match_rule"], u["profile"]["browser"], u["profile"]["device_check"])
        for u in manifest["users"]
    ]
    assert len(set(profiles)) == len(profiles)


def test_powerlaw_volume_within_bounds():
    vol = RecordVolume("powerlaw", 50, 400, alpha=1.8)
    rng = np.random.default_rng(0)
    draws = [vol.draw(rng) for _ in range(2000)]
    assert min(draws) >= 50 and max(draws) <= 400
    # long tail: the median sits well below the cap
    assert sorted(draws)[1000] < 150


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        CorpusSpec(user_count=0)
    with pytest.raises(InvalidInputError):
        CorpusSpec(separability="medium")
    with pytest.raises(InvalidInputError):
        CorpusSpec(browser_marginals={"Chrome": 0.5})
    with pytest.raises(InvalidInputError):
        CorpusSpec(browser_marginals={"Chrome": 0.5, "NetFront": 0.5})
    with pytest.raises(InvalidInputError):
        RecordVolume("uniform", 10, 5)


def test_spec_json_roundtrip():
    spec = small_spec(separability="high")
    again = CorpusSpec.from_json(json.dumps(spec.to_dict()))
    assert again == spec


# --------------------------------------------------------------------------
# Injection
# --------------------------------------------------------------------------


def test_inject_returns_ground_truth(tmp_path):
    generate_corpus(small_spec(), tmp_path)
    refs = inject_known_anomalies(tmp_path, "user00003", 2,
                                  {"browser": "SeaMonkey", "match_rule": "USERKNOWN"})
    assert len(refs) == 2
    gt = (tmp_path / "ground_truth.csv").read_text().splitlines()
    assert gt[0] == "record_ref,user_id,injected"
    assert [row.split(",")[0] for row in gt[1:]] == refs
    manifest = load_manifest(tmp_path)
    assert manifest["injections"][0]["refs"] == refs
    # original log file untouched; injected rows live in their own file
    assert len(manifest["files"]) == 2
    store, stats = ingest_paths([tmp_path / f for f in manifest["files"]])
    assert stats.parsed == manifest["total_records"] + 2
    injected = [r for r in store.users["user00003"] if r.ref in set(refs)]
    assert len(injected) == 2
    for r in injected:
        assert r.browser == "SeaMonkey"
        assert r.match_rule == "USERKNOWN"


def test_inject_null_delta_matches_profile(tmp_path):
    manifest = generate_corpus(small_spec(), tmp_path)
    profile = manifest["users"][0]["profile"]
    refs = inject_known_anomalies(tmp_path, "user00000", 3, {})
    store, _ = ingest_paths(corpus_files(tmp_path))
    injected = [r for r in store.users["user00000"] if r.ref in set(refs)]
    assert len(injected) == 3
    for r in injected:
        assert r.browser == profile["browser"]
        assert r.match_rule == profile["match_rule"]
        assert r.device_check == profile["device_check"]


def test_inject_unknown_user_and_bad_delta(tmp_path):
    generate_corpus(small_spec(), tmp_path)
    with pytest.raises(InvalidInputError):
        inject_known_anomalies(tmp_path, "nobody", 1, {})
    with pytest.raises(InvalidInputError):
        inject_known_anomalies(tmp_path, "user00000", 1, {"browser": "NetFront"})
    with pytest.raises(InvalidInputError):
        inject_known_anomalies(tmp_path, "user00000", 1, {"color": "red"})
    with pytest.raises(InvalidInputError):
        inject_known_anomalies(tmp_path, "user00000", 0, {})


def test_inject_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        generate_corpus(small_spec(), d)
        inject_known_anomalies(d, "user00001", 2, {"browser": "Opera"}, seed=4)
    name = load_manifest(a)["injections"][0]["file"]
    assert (a / name).read_bytes() == (b / name).read_bytes()
