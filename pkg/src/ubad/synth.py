"""Synthetic enterprise access-log corpora with controllable per-user behavior.

Stands in for a proprietary payroll-access dataset: skewed categorical
marginals, a work-hours time profile, and an 89-day window starting
2014-02-15. Two regimes:

  low separability  - every user's categorical values are drawn from the
                      shared global marginals, so users look alike and a
                      per-user detector cannot tell them apart;
  high separability - each user sticks to a distinct dominant profile
                      (match rule, browser, device check, peak hour) with
                      probability `profile_concentration` per field.

Output is the same 42-column delimited layout the ingester consumes, plus a
manifest. Files are written once and never mutated; anomaly injection adds
new files next to the originals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .ingest import DEFAULT_LAYOUT, format_timestamp
from .schema import BROWSER_ORDER, DEVICE_CHECK_ORDER, MATCH_RULE_ORDER

__all__ = [
    "RecordVolume",
    "CorpusSpec",
    "generate_corpus",
    "inject_known_anomalies",
    "load_manifest",
    "DEFAULT_MATCH_RULE_MARGINALS",
    "DEFAULT_BROWSER_MARGINALS",
    "DEFAULT_DEVICE_CHECK_MARGINALS",
]

MANIFEST_NAME = "manifest.json"
GROUND_TRUTH_NAME = "ground_truth.csv"

# Eyeballed, heavily skewed defaults; every value is configuration, not fact.
# A couple of categories dominate each field and the rarest sit near 0.5%:
# rare enough to keep the long tail, common enough that a typical user's
# history holds one or two of them, which is what makes occasional
# own-record anomalies possible.
DEFAULT_MATCH_RULE_MARGINALS = {
    "USER_DEVICE_ASSOCIATED_AND_DEVICE_MFP_MATCHED": 0.72,
    "DEVICEIDCHECK": 0.20,
    "USER_DEVICE_ASSOCIATED_AND_DEVICE_MFP_NOT_MATCHED": 0.03,
    "USER_DEVICE_NOT_ASSOCIATED_AND_DEVICE_MFP_MATCHED": 0.02,
    "USERKNOWN": 0.012,
    "USER_DEVICE_NOT_ASSOCIATED_AND_DEVICE_MFP_NOT_MATCHED": 0.008,
    "DEVICEVELOCITY": 0.006,
    "USERVELOCITY": 0.004,
}

DEFAULT_BROWSER_MARGINALS = {
    "Internet Explorer": 0.728,
    "Chrome": 0.17,
    "Firefox": 0.05,
    "Safari": 0.02,
    "Android Browser": 0.012,
    "Opera": 0.008,
    "SeaMonkey": 0.006,
    "PSP": 0.006,
}

DEFAULT_DEVICE_CHECK_MARGINALS = {"YY": 0.93, "NN": 0.05, "YN": 0.02}

# P(signature check = Y) when the device check is NN; YN/YY force Y.
DEFAULT_SIGNATURE_Y_RATE = 0.75

DEFAULT_HOUR_WEIGHTS = (
    0.0015, 0.0015, 0.0015, 0.0015, 0.0015, 0.0015,   # 00-05
    0.008, 0.03, 0.07, 0.10, 0.105, 0.105,            # 06-11
    0.09, 0.10, 0.105, 0.10, 0.09, 0.055,             # 12-17
    0.02, 0.008, 0.0015, 0.0015, 0.0015, 0.0015,      # 18-23
)

DEFAULT_DAY_WEIGHTS = (0.19, 0.19, 0.19, 0.19, 0.19, 0.03, 0.02)

# Signatures are synthesised from these so the browser extractor recovers
# the intended name.
USER_AGENT_TEMPLATES = {
    "Internet Explorer": "Mozilla/5.0 (compatible; MSIE 10.0; Windows NT 6.1; Trident/6.0)",
    "Chrome": "Mozilla/5.0 (Windows NT 6.1) AppleWebKit/537.36 (KHTML, like Gecko) "
              "Chrome/33.0.1750.154 Safari/537.36",
    "Firefox": "Mozilla/5.0 (Windows NT 6.1; rv:27.0) Gecko/20100101 Firefox/27.0",
    "Safari": "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_9_1) AppleWebKit/537.73.11 "
              "(KHTML, like Gecko) Version/7.0.1 Safari/537.73.11",
    "Opera": "Opera/9.80 (Windows NT 6.1) Presto/2.12.388 Version/12.16",
    "SeaMonkey": "Mozilla/5.0 (Windows NT 6.1; rv:25.0) Gecko/20100101 "
                 "Firefox/25.0 SeaMonkey/2.22.1",
    "PSP": "Mozilla/4.0 (PSP (PlayStation Portable); 2.00)",
    "Android Browser": "Mozilla/5.0 (Linux; U; Android 4.0.4; en-gb; GT-I9300 "
                       "Build/IMM76D) AppleWebKit/534.30 (KHTML, like Gecko) "
                       "Version/4.0 Mobile Safari/534.30",
}


@dataclass(frozen=True)
class RecordVolume:
    """How many records each user gets: 'uniform' in [lo, hi] or a truncated
    power law over the same range (Pareto tail index `alpha`)."""

    kind: str = "powerlaw"
    lo: int = 100
    hi: int = 20000
    alpha: float = 1.8

    def __post_init__(self):
        if self.kind not in ("uniform", "powerlaw"):
            raise InvalidInputError(f"unknown volume kind {self.kind!r}")
        if not 1 <= self.lo <= self.hi:
            raise InvalidInputError("need 1 <= lo <= hi")

    def draw(self, rng: np.random.Generator) -> int:
        if self.kind == "uniform":
            return int(rng.integers(self.lo, self.hi + 1))
        u = rng.random()
        x = self.lo * (1.0 - u) ** (-1.0 / (self.alpha - 1.0))
        return int(min(round(x), self.hi))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "RecordVolume":
        return cls(kind=d.get("kind", "powerlaw"), lo=int(d["lo"]), hi=int(d["hi"]),
                   alpha=float(d.get("alpha", 1.8)))


def _normalized(marginals: dict, allowed: tuple, what: str) -> dict:
    unknown = set(marginals) - set(allowed)
    if unknown:
        raise InvalidInputError(f"unknown {what} values: {sorted(unknown)}")
    total = sum(marginals.values())
    if not np.isclose(total, 1.0, atol=1e-6):
        raise InvalidInputError(f"{what} marginals sum to {total}, expected 1")
    return {k: v / total for k, v in marginals.items()}


@dataclass(frozen=True)
class CorpusSpec:
    user_count: int = 100
    records_per_user: RecordVolume = RecordVolume()
    match_rule_marginals: dict = field(default_factory=lambda: dict(DEFAULT_MATCH_RULE_MARGINALS))
    browser_marginals: dict = field(default_factory=lambda: dict(DEFAULT_BROWSER_MARGINALS))
    device_check_marginals: dict = field(default_factory=lambda: dict(DEFAULT_DEVICE_CHECK_MARGINALS))
    signature_y_rate: float = DEFAULT_SIGNATURE_Y_RATE
    hour_weights: tuple = DEFAULT_HOUR_WEIGHTS
    day_weights: tuple = DEFAULT_DAY_WEIGHTS
    profile_concentration: float = 0.98
    # Dirichlet precision for per-user variation of the categorical
    # marginals and time-of-day profile: users keep the same skewed value
    # sets but their personal rates for the rare categories differ, the
    # way real users' rare behaviors do. 0 disables (all users share the
    # global marginals exactly).
    user_jitter: float = 15.0
    # high separability only: restrict which values dominant profiles may
    # take, per field name; None draws from the full value sets
    profile_pool: dict | None = None
    separability: str = "low"
    start_date: str = "2014-02-15"
    days: int = 89
    seed: int = 0

    def __post_init__(self):
        if self.user_count < 1:
            raise InvalidInputError("user_count must be >= 1")
        if self.separability not in ("low", "high"):
            raise InvalidInputError("separability must be 'low' or 'high'")
        if not 0.0 <= self.profile_concentration <= 1.0:
            raise InvalidInputError("profile_concentration must be in [0, 1]")
        if self.user_jitter < 0:
            raise InvalidInputError("user_jitter must be >= 0")
        _normalized(self.match_rule_marginals, MATCH_RULE_ORDER, "match rule")
        _normalized(self.browser_marginals, BROWSER_ORDER, "browser")
        _normalized(self.device_check_marginals, DEVICE_CHECK_ORDER, "device check")
        if self.profile_pool is not None:
            allowed = {"match_rule": MATCH_RULE_ORDER, "browser": BROWSER_ORDER,
                       "device_check": DEVICE_CHECK_ORDER}
            for key, values in self.profile_pool.items():
                if key not in allowed:
                    raise InvalidInputError(f"unknown profile_pool field {key!r}")
                bad = [v for v in values if v not in allowed[key]]
                if bad or not values:
                    raise InvalidInputError(f"bad profile_pool values for {key!r}: {bad}")

    def to_dict(self) -> dict:
        return {
            "user_count": self.user_count,
            "records_per_user": self.records_per_user.to_dict(),
            "match_rule_marginals": dict(self.match_rule_marginals),
            "browser_marginals": dict(self.browser_marginals),
            "device_check_marginals": dict(self.device_check_marginals),
            "signature_y_rate": self.signature_y_rate,
            "hour_weights": list(self.hour_weights),
            "day_weights": list(self.day_weights),
            "profile_concentration": self.profile_concentration,
            "user_jitter": self.user_jitter,
            "profile_pool": dict(self.profile_pool) if self.profile_pool else None,
            "separability": self.separability,
            "start_date": self.start_date,
            "days": self.days,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        kwargs = dict(d)
        if "records_per_user" in kwargs:
            kwargs["records_per_user"] = RecordVolume.from_dict(kwargs["records_per_user"])
        if "hour_weights" in kwargs:
            kwargs["hour_weights"] = tuple(kwargs["hour_weights"])
        if "day_weights" in kwargs:
            kwargs["day_weights"] = tuple(kwargs["day_weights"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        return cls.from_dict(json.loads(text))


def _prob_vector(marginals: dict, order: tuple) -> np.ndarray:
    p = np.array([marginals.get(v, 0.0) for v in order])
    return p / p.sum()


def _peaked_hours(peak: int, sigma: float = 2.0) -> np.ndarray:
    h = np.arange(24)
    dist = np.minimum(np.abs(h - peak), 24 - np.abs(h - peak))
    w = np.exp(-0.5 * (dist / sigma) ** 2)
    return w / w.sum()


def _personal_weights(rng: np.random.Generator, p: np.ndarray, jitter: float) -> np.ndarray:
    """One user's variant of a global weight vector (Dirichlet around it)."""
    if jitter <= 0:
        return p
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = rng.dirichlet(p[nz] * jitter)
    return out


def _filler_columns() -> list[str]:
    used = 7  # log id, user, datetime, match rule, signature, device check, device signature
    filler = ["PAYROLL", "WEB", "SUCCESS"] + ["-"] * (42 - used - 3)
    return filler


def _distinct_profiles(rng: np.random.Generator, pool: dict | None):
    pool = pool or {}
    combos = [(mr, br, dc)
              for mr in pool.get("match_rule", MATCH_RULE_ORDER)
              for br in pool.get("browser", BROWSER_ORDER)
              for dc in pool.get("device_check", DEVICE_CHECK_ORDER)]
    perm = rng.permutation(len(combos))
    return [combos[i] for i in perm]


@dataclass
class _UserPlan:
    user_id: str
    count: int
    profile: dict


def _mode(values: list[str]) -> str:
    uniq, counts = np.unique(values, return_counts=True)
    return str(uniq[np.argmax(counts)])


def generate_corpus(spec: CorpusSpec, out_dir) -> dict:
    """Write logs.csv, layout.json and manifest.json under `out_dir`;
    returns the manifest. Byte-identical output for identical spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start = datetime.strptime(spec.start_date, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    dates = [start + timedelta(days=i) for i in range(spec.days)]
    date_dow = np.array([d.weekday() for d in dates])
    dow_w = np.asarray(spec.day_weights, float)
    dow_w = dow_w / dow_w.sum()
    hour_w = np.asarray(spec.hour_weights, float)
    hour_w = hour_w / hour_w.sum()

    p_mr = _prob_vector(spec.match_rule_marginals, MATCH_RULE_ORDER)
    p_br = _prob_vector(spec.browser_marginals, BROWSER_ORDER)
    p_dc = _prob_vector(spec.device_check_marginals, DEVICE_CHECK_ORDER)

    profile_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    distinct = (_distinct_profiles(profile_rng, spec.profile_pool)
                if spec.separability == "high" else None)

    filler = _filler_columns()
    plans: list[_UserPlan] = []
    log_id = 0
    log_path = out_dir / "logs.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for ui in range(spec.user_count):
            user_id = f"user{ui:05d}"
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, ui]))
            n = spec.records_per_user.draw(rng)
            device_token = f"{rng.integers(0, 2**48):012x}"

            u_mr = _personal_weights(rng, p_mr, spec.user_jitter)
            u_br = _personal_weights(rng, p_br, spec.user_jitter)
            u_dc = _personal_weights(rng, p_dc, spec.user_jitter)
            u_hour = _personal_weights(rng, hour_w, 2.0 * spec.user_jitter)
            u_dow = _personal_weights(rng, dow_w, 2.0 * spec.user_jitter)
            u_date = u_dow[date_dow]
            u_date = u_date / u_date.sum()
            if spec.user_jitter > 0 and 0.0 < spec.signature_y_rate < 1.0:
                u_sig_y = float(rng.beta(spec.user_jitter * spec.signature_y_rate,
                                         spec.user_jitter * (1.0 - spec.signature_y_rate)))
            else:
                u_sig_y = spec.signature_y_rate

            if spec.separability == "high":
                dom_mr, dom_br, dom_dc = distinct[ui % len(distinct)]
                peak_hour = int(rng.integers(8, 18))
                user_hour_w = _peaked_hours(peak_hour)
                # independent keep-draws per field: a user's occasional
                # deviations usually change one field at a time, so each
                # dimension's rare values survive the other dimensions'
                # splits when a forest partitions the history
                keep = rng.random((n, 3)) < spec.profile_concentration
                mr = np.where(keep[:, 0], dom_mr,
                              rng.choice(np.array(MATCH_RULE_ORDER), n, p=u_mr))
                br = np.where(keep[:, 1], dom_br,
                              rng.choice(np.array(BROWSER_ORDER), n, p=u_br))
                dc = np.where(keep[:, 2], dom_dc,
                              rng.choice(np.array(DEVICE_CHECK_ORDER), n, p=u_dc))
            else:
                peak_hour = int(np.argmax(u_hour))
                user_hour_w = u_hour
                mr = rng.choice(np.array(MATCH_RULE_ORDER), n, p=u_mr)
                br = rng.choice(np.array(BROWSER_ORDER), n, p=u_br)
                dc = rng.choice(np.array(DEVICE_CHECK_ORDER), n, p=u_dc)

            sig = np.where(
                (dc == "YN") | (dc == "YY"),
                "Y",
                np.where(rng.random(n) < u_sig_y, "Y", "N"),
            )
            day_idx = rng.choice(spec.days, n, p=u_date)
            hour = rng.choice(24, n, p=user_hour_w)
            minute = rng.integers(0, 60, n)
            second = rng.integers(0, 60, n)
            stamps = sorted(
                dates[day_idx[k]] + timedelta(hours=int(hour[k]), minutes=int(minute[k]),
                                              seconds=int(second[k]))
                for k in range(n)
            )
            for k in range(n):
                ua = USER_AGENT_TEMPLATES[str(br[k])]
                row = [
                    f"L{log_id:09d}",
                    user_id,
                    format_timestamp(stamps[k]),
                    str(mr[k]),
                    str(sig[k]),
                    str(dc[k]),
                    f"{ua}|dsig:{device_token}",
                ] + filler
                writer.writerow(row)
                log_id += 1

            plans.append(_UserPlan(
                user_id=user_id,
                count=n,
                profile={
                    "match_rule": _mode(list(mr)),
                    "browser": _mode(list(br)),
                    "device_check": _mode(list(dc)),
                    "signature_check": _mode(list(sig)),
                    "peak_hour": peak_hour,
                },
            ))

    (out_dir / "layout.json").write_text(DEFAULT_LAYOUT.to_json())
    manifest = {
        "format_version": 1,
        "spec": spec.to_dict(),
        "total_records": log_id,
        "files": ["logs.csv"],
        "layout_file": "layout.json",
        "users": [{"user_id": p.user_id, "count": p.count, "profile": p.profile}
                  for p in plans],
        "injections": [],
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_manifest(corpus_dir) -> dict:
    return json.loads((Path(corpus_dir) / MANIFEST_NAME).read_text())


_DELTA_FIELDS = {
    "match_rule": MATCH_RULE_ORDER,
    "browser": BROWSER_ORDER,
    "device_check": DEVICE_CHECK_ORDER,
    "signature_check": ("N", "Y"),
}


def inject_known_anomalies(corpus_dir, user_id: str, count: int,
                           delta: dict, seed: int = 0) -> list[str]:
    """Append `count` records for `user_id` whose fields follow the user's
    own profile except where `delta` overrides them.

    Records land in a new file (existing files are never rewritten); the
    injected refs are recorded in ground_truth.csv and the manifest, and
    returned. A delta identical to the profile yields records that should
    score as normal.
    """
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    for key, value in delta.items():
        if key not in _DELTA_FIELDS:
            raise InvalidInputError(f"unknown delta field {key!r}")
        if value not in _DELTA_FIELDS[key]:
            raise InvalidInputError(f"unknown value {value!r} for delta field {key!r}")
    entry = next((u for u in manifest["users"] if u["user_id"] == user_id), None)
    if entry is None:
        raise InvalidInputError(f"unknown user {user_id!r}")

    spec = CorpusSpec.from_dict(manifest["spec"])
    profile = dict(entry["profile"])
    values = {k: profile[k] for k in ("match_rule", "browser", "device_check",
                                      "signature_check")}
    values.update(delta)
    if "signature_check" not in delta and values["device_check"] in ("YN", "YY"):
        values["signature_check"] = "Y"

    start = datetime.strptime(spec.start_date, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    dates = [start + timedelta(days=i) for i in range(spec.days)]
    date_w = np.array([spec.day_weights[d.weekday()] for d in dates])
    date_w = date_w / date_w.sum()
    hour_w = (_peaked_hours(profile["peak_hour"]) if spec.separability == "high"
              else np.asarray(spec.hour_weights, float) / sum(spec.hour_weights))

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2, seed]))
    next_id = manifest["total_records"] + sum(len(i["refs"]) for i in manifest["injections"])
    ua = USER_AGENT_TEMPLATES[values["browser"]]
    device_token = f"{rng.integers(0, 2**48):012x}"
    filler = _filler_columns()

    refs = []
    file_name = f"injected_{len(manifest['injections']):03d}.csv"
    with open(corpus_dir / file_name, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for k in range(count):
            day = int(rng.choice(spec.days, p=date_w))
            stamp = dates[day] + timedelta(
                hours=int(rng.choice(24, p=hour_w)),
                minutes=int(rng.integers(0, 60)),
                seconds=int(rng.integers(0, 60)),
            )
            ref = f"L{next_id + k:09d}"
            writer.writerow([
                ref,
                user_id,
                format_timestamp(stamp),
                values["match_rule"],
                values["signature_check"],
                values["device_check"],
                f"{ua}|dsig:{device_token}",
            ] + filler)
            refs.append(ref)

    gt_path = corpus_dir / GROUND_TRUTH_NAME
    new_file = not gt_path.exists()
    with open(gt_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(["record_ref", "user_id", "injected"])
        for ref in refs:
            writer.writerow([ref, user_id, True])

    manifest["files"].append(file_name)
    manifest["injections"].append({
        "user_id": user_id,
        "count": count,
        "delta": dict(delta),
        "file": file_name,
        "refs": refs,
    })
    (corpus_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return refs
