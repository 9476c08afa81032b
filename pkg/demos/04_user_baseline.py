"""
A per-user baseline catching injected deviations
================================================

One user with a strongly dominant categorical profile, plus two injected
records that switch both the browser and the match rule. The user's forest
scores its own history near 0.5 and pushes the two deviators to the top,
well past the 0.80 alarm threshold.
"""

import tempfile
from pathlib import Path

import numpy as np

from ubad import anomaly_scores, build_schema, ingest_paths, train_user_model
from ubad.modeling import ForestParams, save_user_model, load_user_model
from ubad.schema import extract_matrix
from ubad.synth import (
    CorpusSpec,
    RecordVolume,
    generate_corpus,
    inject_known_anomalies,
    load_manifest,
)

workdir = Path(tempfile.mkdtemp(prefix="ubad_demo_"))
spec = CorpusSpec(
    user_count=1,
    records_per_user=RecordVolume("uniform", 1000, 1000),
    separability="low",
    user_jitter=0.0,
    browser_marginals={"Chrome": 0.994, "SeaMonkey": 0.006},
    match_rule_marginals={
        "USER_DEVICE_ASSOCIATED_AND_DEVICE_MFP_MATCHED": 0.994,
        "USERKNOWN": 0.006,
    },
    device_check_marginals={"YY": 1.0},
    signature_y_rate=1.0,
    seed=2003,
)
generate_corpus(spec, workdir)
injected_refs = set(inject_known_anomalies(
    workdir, "user00000", 2,
    {"browser": "SeaMonkey", "match_rule": "USERKNOWN"},
))
print(f"injected records: {sorted(injected_refs)}")

store, _ = ingest_paths([workdir / f for f in load_manifest(workdir)["files"]])
records = store.users["user00000"]
injected = [r for r in records if r.ref in injected_refs]
normal = [r for r in records if r.ref not in injected_refs]

# hold out 98 ordinary records; train on the rest
rng = np.random.default_rng(3)
held = set(rng.choice(len(normal), 98, replace=False).tolist())
test_set = [normal[i] for i in sorted(held)] + injected
train_set = [normal[i] for i in range(len(normal)) if i not in held]

schema = build_schema(6)
model = train_user_model("user00000", train_set, schema,
                         ForestParams(seed=3), threshold=0.80)
print(f"trained on {model.training_record_count} records")

X, _ = extract_matrix(schema, test_set)
scores = anomaly_scores(model.forest, X)

print("\ntop 6 of the 100-record test set:")
print(f"{'ref':>12s} {'rule':>4s} {'sig':>3s} {'dev':>3s} {'brw':>3s}  score")
for i in np.argsort(scores)[::-1][:6]:
    rec, vec = test_set[i], X[i].astype(int)
    flag = " <- injected" if rec.ref in injected_refs else ""
    print(f"{rec.ref:>12s} {vec[0]:4d} {vec[1]:3d} {vec[2]:3d} {vec[3]:3d}  "
          f"{scores[i]:.4f}{flag}")

alarms = int((scores > model.threshold).sum())
print(f"\nrecords over the {model.threshold} threshold: {alarms} of {len(scores)}")

# the bundle round-trips bit-for-bit
bundle = workdir / "bundle"
save_user_model(model, bundle, ForestParams(seed=3))
reloaded = load_user_model(bundle)
same = np.array_equal(scores, anomaly_scores(reloaded.forest, X))
print(f"save/load preserves every score bitwise: {same}")
