"""Experimental protocol: per-user trials, system comparison, metric averaging.

For each user, each run holds out `test_self` of the user's records as the
positive test half and draws `test_other` records uniformly from everyone
else's as the negative half; the rest of the user's records train the
baseline. The positive class is "belongs to this user": a held-out own
record scored normal is a true positive, scored anomalous a false negative;
a foreign record scored anomalous is a true negative, scored normal a false
positive.

Averaging order is fixed: per-user metrics are averaged across users within
a run, then across runs. Ratios with a zero denominator are undefined (not
zero) and are left out of averages; exclusion counts are reported. Sums use
math.fsum, so user ordering cannot perturb the result.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .forest import anomaly_scores, fit_forest
from .ingest import UserStore, select_users_by_frequency
from .modeling import DEFAULT_THRESHOLD, ForestParams, label_for
from .schema import build_schema, extract_matrix

__all__ = [
    "ConfusionMatrix",
    "MetricsReport",
    "ExperimentConfig",
    "RunResult",
    "SystemResult",
    "ExperimentReport",
    "compute_metrics",
    "run_user_trial",
    "run_experiment",
    "anomalous_count_histogram",
    "render_text_table",
    "render_csv",
    "histogram_csv",
]

_METRIC_NAMES = ("tp_rate", "fp_rate", "precision", "recall", "accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts for one binary trial; the positive class is the modeled user."""

    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise InvalidInputError("confusion-matrix counts must be >= 0")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fn=self.fn + other.fn,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
        )


@dataclass(frozen=True)
class MetricsReport:
    """The five single-figure measures; None encodes an undefined 0/0 ratio."""

    tp_rate: float | None
    fp_rate: float | None
    precision: float | None
    recall: float | None
    accuracy: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in _METRIC_NAMES}


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """TP rate, FP rate, precision, recall, accuracy from raw counts."""
    return MetricsReport(
        tp_rate=_ratio(cm.tp, cm.tp + cm.fn),
        fp_rate=_ratio(cm.fp, cm.fp + cm.tn),
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        recall=_ratio(cm.tp, cm.tp + cm.fn),
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    system_ids: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    runs: int = 10
    test_self: int = 100
    test_other: int = 100
    threshold: float = DEFAULT_THRESHOLD
    forest: ForestParams = ForestParams()
    master_seed: int = 0
    band: tuple[int, int] = (501, 600)
    jobs: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise InvalidInputError("runs must be >= 1")
        if self.test_self < 1 or self.test_other < 1:
            raise InvalidInputError("test_self and test_other must be >= 1")
        bad = [s for s in self.system_ids if s not in (1, 2, 3, 4, 5, 6, 7)]
        if bad:
            raise InvalidInputError(f"invalid system ids: {bad}")

    def to_dict(self) -> dict:
        return {
            "system_ids": list(self.system_ids),
            "runs": self.runs,
            "test_self": self.test_self,
            "test_other": self.test_other,
            "threshold": self.threshold,
            "forest": self.forest.to_dict(),
            "master_seed": self.master_seed,
            "band": list(self.band),
            "jobs": self.jobs,
        }


# --------------------------------------------------------------------------
# Seeding: stable per (master seed, system, run, user id), independent of
# user iteration order
# --------------------------------------------------------------------------


def _user_key(user_id: str) -> int:
    return int.from_bytes(hashlib.sha256(user_id.encode()).digest()[:8], "big")


def _run_seed(master_seed: int, system_id: int, run_index: int) -> int:
    ss = np.random.SeedSequence([master_seed, system_id, run_index])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# One trial
# --------------------------------------------------------------------------


@dataclass
class TrialResult:
    user_id: str
    cm: ConfusionMatrix
    self_scores: np.ndarray
    foreign_scores: np.ndarray
    self_refs: list[str]
    foreign_refs: list[str]

    @property
    def fn_count(self) -> int:
        return self.cm.fn


class _Pool:
    """Foreign-record pool: the whole corpus minus one user's slice.

    Indexes lazily into the corpus-wide matrix so per-trial draws never copy
    the pool.
    """

    def __init__(self, X_all: np.ndarray, refs_all: list[str],
                 exclude_start: int = 0, exclude_end: int = 0):
        self._X = X_all
        self._refs = refs_all
        self._s = exclude_start
        self._gap = exclude_end - exclude_start

    def __len__(self) -> int:
        return len(self._X) - self._gap

    def take(self, indices: np.ndarray) -> tuple[np.ndarray, list[str]]:
        mapped = np.where(indices < self._s, indices, indices + self._gap)
        return self._X[mapped], [self._refs[i] for i in mapped]


def _trial(user_id: str, X_self: np.ndarray, self_refs: list[str],
           pool: _Pool, config: ExperimentConfig, run_seed: int) -> TrialResult:
    if len(X_self) <= config.test_self:
        raise InsufficientDataError(
            f"user {user_id!r} has {len(X_self)} usable records, "
            f"needs more than {config.test_self}"
        )
    if len(pool) < config.test_other:
        raise InsufficientDataError(
            f"foreign pool has {len(pool)} records, needs >= {config.test_other}"
        )
    key = _user_key(user_id)
    split_rng = np.random.default_rng(np.random.SeedSequence([run_seed, key, 1]))
    foreign_rng = np.random.default_rng(np.random.SeedSequence([run_seed, key, 2]))

    held = split_rng.choice(len(X_self), size=config.test_self, replace=False)
    train_mask = np.ones(len(X_self), bool)
    train_mask[held] = False

    forest = fit_forest(
        X_self[train_mask],
        tree_count=config.forest.tree_count,
        sample_size=config.forest.sample_size,
        seed=[run_seed, key, 3],
        height_limit=config.forest.height_limit,
    )

    picked = foreign_rng.choice(len(pool), size=config.test_other, replace=False)
    X_foreign, foreign_refs = pool.take(picked)
    self_scores = anomaly_scores(forest, X_self[held])
    foreign_scores = anomaly_scores(forest, X_foreign)

    t = config.threshold
    fn = int((self_scores > t).sum())
    tn = int((foreign_scores > t).sum())
    cm = ConfusionMatrix(
        tp=config.test_self - fn,
        fn=fn,
        fp=config.test_other - tn,
        tn=tn,
    )
    return TrialResult(
        user_id=user_id,
        cm=cm,
        self_scores=self_scores,
        foreign_scores=foreign_scores,
        self_refs=[self_refs[i] for i in held],
        foreign_refs=foreign_refs,
    )


def _valid_rows(schema, records) -> tuple[np.ndarray, list[str]]:
    """Feature matrix plus aligned record refs, dropping unextractable rows."""
    X, skipped_rows = extract_matrix(schema, records, lenient=True)
    bad = {i for i, _ in skipped_rows}
    refs = [rec.ref for i, rec in enumerate(records) if i not in bad]
    return X, refs


def run_user_trial(user_id: str, store: UserStore, system_id: int,
                   config: ExperimentConfig, run_seed: int) -> ConfusionMatrix:
    """Run one user's trial directly against a store (standalone form)."""
    schema = build_schema(system_id)
    own = store.users.get(user_id)
    if own is None:
        raise InvalidInputError(f"unknown user {user_id!r}")
    X_self, self_refs = _valid_rows(schema, own)
    foreign = [r for u in store.user_ids() if u != user_id for r in store.users[u]]
    X_pool, pool_refs = _valid_rows(schema, foreign)
    pool = _Pool(X_pool, pool_refs)
    return _trial(user_id, X_self, self_refs, pool, config, run_seed).cm


# --------------------------------------------------------------------------
# Averaging
# --------------------------------------------------------------------------


def _average_metrics(reports: list[MetricsReport]) -> tuple[MetricsReport, dict]:
    """Mean per metric, skipping undefined entries; returns exclusion counts."""
    values: dict = {}
    excluded: dict = {}
    for name in _METRIC_NAMES:
        defined = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        excluded[name] = len(reports) - len(defined)
        values[name] = math.fsum(defined) / len(defined) if defined else None
    return MetricsReport(**values), excluded


@dataclass
class RunResult:
    run_index: int
    metrics: MetricsReport
    fn_counts: dict[str, int]
    excluded: dict
    trial_cms: dict[str, ConfusionMatrix]


@dataclass
class SystemResult:
    system_id: int
    label: str
    metrics: MetricsReport
    per_run: list[RunResult]
    excluded_runs: dict


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    user_ids: list[str]
    systems: list[SystemResult]
    skipped: list = field(default_factory=list)


def _system_label(system_id: int) -> str:
    dims = "+".join(d.name for d in build_schema(system_id).dimensions)
    return f"System {system_id} ({dims})"


def anomalous_count_histogram(fn_counts) -> dict[int, int]:
    """Bin users by how many of their own test records were flagged."""
    hist: dict[int, int] = {}
    for c in fn_counts:
        hist[c] = hist.get(c, 0) + 1
    return dict(sorted(hist.items()))


def run_experiment(store: UserStore, config: ExperimentConfig,
                   verdict_sink=None) -> ExperimentReport:
    """Full protocol over every system in the config.

    `verdict_sink`, if given, receives one
    (system_id, run_index, user_id, ref, score, label, cls) tuple per scored
    record for audit dumps.
    """
    selected = select_users_by_frequency(store, *config.band)
    report = ExperimentReport(config=config, user_ids=selected, systems=[])
    if not selected:
        return report

    all_users = store.user_ids()
    for system_id in config.system_ids:
        schema = build_schema(system_id)
        # per-user feature matrices once per system; rows failing extraction
        # are dropped from both training and test pools
        matrices: dict[str, np.ndarray] = {}
        refs: dict[str, list[str]] = {}
        for user_id in all_users:
            recs = store.users[user_id]
            X, skipped_rows = extract_matrix(schema, recs, lenient=True)
            ok = set(range(len(recs))) - {i for i, _ in skipped_rows}
            matrices[user_id] = X
            refs[user_id] = [recs[i].ref for i in sorted(ok)]

        lengths = {u: len(matrices[u]) for u in all_users}
        offsets: dict[str, int] = {}
        pos = 0
        for u in all_users:
            offsets[u] = pos
            pos += lengths[u]
        X_all = (np.vstack([matrices[u] for u in all_users])
                 if pos else np.empty((0, schema.n_dims)))
        refs_all = [r for u in all_users for r in refs[u]]

        per_run: list[RunResult] = []
        for run_index in range(config.runs):
            run_seed = _run_seed(config.master_seed, system_id, run_index)

            def one(user_id: str, run_seed=run_seed):
                s = offsets[user_id]
                pool = _Pool(X_all, refs_all, s, s + lengths[user_id])
                try:
                    return _trial(user_id, matrices[user_id], refs[user_id],
                                  pool, config, run_seed)
                except InsufficientDataError as e:
                    return (user_id, str(e))

            if config.jobs > 1:
                with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                    outcomes = list(pool.map(one, selected))
            else:
                outcomes = [one(u) for u in selected]

            trials: list[TrialResult] = []
            for out in outcomes:
                if isinstance(out, TrialResult):
                    trials.append(out)
                else:
                    user_id, reason = out
                    report.skipped.append(
                        {"system": system_id, "run": run_index,
                         "user": user_id, "reason": reason}
                    )
            if verdict_sink is not None:
                t = config.threshold
                for tr in trials:
                    for ref, s in zip(tr.self_refs, tr.self_scores):
                        verdict_sink((system_id, run_index, tr.user_id, ref,
                                      float(s), label_for(float(s), t), "self"))
                    for ref, s in zip(tr.foreign_refs, tr.foreign_scores):
                        verdict_sink((system_id, run_index, tr.user_id, ref,
                                      float(s), label_for(float(s), t), "other"))

            per_user_metrics = [compute_metrics(tr.cm) for tr in trials]
            run_metrics, excluded = _average_metrics(per_user_metrics)
            per_run.append(RunResult(
                run_index=run_index,
                metrics=run_metrics,
                fn_counts={tr.user_id: tr.fn_count for tr in trials},
                excluded=excluded,
                trial_cms={tr.user_id: tr.cm for tr in trials},
            ))

        system_metrics, excluded_runs = _average_metrics([r.metrics for r in per_run])
        report.systems.append(SystemResult(
            system_id=system_id,
            label=_system_label(system_id),
            metrics=system_metrics,
            per_run=per_run,
            excluded_runs=excluded_runs,
        ))
    return report


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

_COLUMN_TITLES = ("TP rate", "FP rate", "Precision", "Recall", "Accuracy")


def _pct(x: float | None) -> str:
    return "undefined" if x is None else f"{100.0 * x:.2f}%"


def render_text_table(report: ExperimentReport) -> str:
    rows = [[s.label] + [_pct(getattr(s.metrics, m)) for m in _METRIC_NAMES]
            for s in report.systems]
    header = ["System"] + list(_COLUMN_TITLES)
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    lines = []
    lines.append("  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i])
                           for i, h in enumerate(header)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i])
                               for i, c in enumerate(r)))
    return "\n".join(lines) + "\n"


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["system", "label"] + list(_METRIC_NAMES))
    for s in report.systems:
        w.writerow([s.system_id, s.label]
                   + [_pct(getattr(s.metrics, m)) for m in _METRIC_NAMES])
    return buf.getvalue()


def histogram_csv(hist: dict[int, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["own_record_anomaly_count", "users"])
    for k in sorted(hist):
        w.writerow([k, hist[k]])
    return buf.getvalue()
