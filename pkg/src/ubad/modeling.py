"""Per-user baseline models: a forest over the user's history plus a threshold.

A record is anomalous for a user exactly when its score strictly exceeds the
model threshold; a score equal to the threshold counts as normal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .forest import Forest, anomaly_score, anomaly_scores, fit_forest
from .schema import FeatureSchema, extract_features, extract_matrix

__all__ = [
    "ForestParams",
    "UserModel",
    "Verdict",
    "NORMAL",
    "ANOMALOUS",
    "DEFAULT_THRESHOLD",
    "train_user_model",
    "classify",
    "score_records",
    "save_user_model",
    "load_user_model",
]

NORMAL = "normal"
ANOMALOUS = "anomalous"
DEFAULT_THRESHOLD = 0.80


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 100
    sample_size: int = 256
    seed: object = 0
    height_limit: int | None = None

    def to_dict(self) -> dict:
        seed = self.seed
        if isinstance(seed, np.integer):
            seed = int(seed)
        return {
            "tree_count": self.tree_count,
            "sample_size": self.sample_size,
            "seed": seed,
            "height_limit": self.height_limit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        return cls(
            tree_count=int(d["tree_count"]),
            sample_size=int(d["sample_size"]),
            seed=d["seed"],
            height_limit=d.get("height_limit"),
        )


@dataclass(frozen=True, eq=False)
class UserModel:
    user_id: str
    schema: FeatureSchema
    forest: Forest
    threshold: float
    training_record_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidInputError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.forest.n_dims is not None and self.forest.n_dims != self.schema.n_dims:
            raise InvalidInputError(
                f"forest has {self.forest.n_dims} dimensions, "
                f"schema has {self.schema.n_dims}"
            )

    def with_threshold(self, threshold: float) -> "UserModel":
        return replace(self, threshold=threshold)


@dataclass(frozen=True)
class Verdict:
    score: float
    label: str

    @property
    def is_anomalous(self) -> bool:
        return self.label == ANOMALOUS


def label_for(score: float, threshold: float) -> str:
    # equality goes to NORMAL: only scores strictly above the threshold alarm
    return ANOMALOUS if score > threshold else NORMAL


def train_user_model(user_id: str, records, schema: FeatureSchema,
                     params: ForestParams = ForestParams(),
                     threshold: float = DEFAULT_THRESHOLD,
                     lenient: bool = True) -> UserModel:
    """Fit a baseline forest on the user's records.

    Records failing feature extraction are skipped (and must leave at least
    2 usable ones) when lenient, else raise.
    """
    X, skipped = extract_matrix(schema, records, lenient=lenient)
    if len(X) < 2:
        raise InsufficientDataError(
            f"user {user_id!r}: {len(X)} usable records ({len(skipped)} skipped), need >= 2"
        )
    forest = fit_forest(
        X,
        tree_count=params.tree_count,
        sample_size=params.sample_size,
        seed=params.seed,
        height_limit=params.height_limit,
    )
    return UserModel(
        user_id=user_id,
        schema=schema,
        forest=forest,
        threshold=threshold,
        training_record_count=len(X),
    )


def classify(model: UserModel, record) -> Verdict:
    """Score one record against the user's baseline."""
    x = extract_features(model.schema, record)
    score = anomaly_score(model.forest, x)
    return Verdict(score=score, label=label_for(score, model.threshold))


def classify_batch(model: UserModel, X: np.ndarray) -> list[Verdict]:
    scores = anomaly_scores(model.forest, X)
    return [Verdict(score=float(s), label=label_for(float(s), model.threshold))
            for s in scores]


def score_records(model: UserModel, records):
    """Yield (record, verdict, error) per record; exactly one of verdict and
    error is set. Extraction failures become error strings, never silent
    anomalies."""
    for rec in records:
        try:
            x = extract_features(model.schema, rec)
        except InvalidInputError as e:
            yield rec, None, str(e)
            continue
        score = anomaly_score(model.forest, x)
        yield rec, Verdict(score=score, label=label_for(score, model.threshold)), None


# --------------------------------------------------------------------------
# Model bundle: forest.json + schema.json + metadata.json in one directory
# --------------------------------------------------------------------------

_FOREST_FILE = "forest.json"
_SCHEMA_FILE = "schema.json"
_META_FILE = "metadata.json"


def _content_hash(forest_json: str, schema_json: str, threshold: float) -> str:
    h = hashlib.sha256()
    h.update(forest_json.encode())
    h.update(schema_json.encode())
    h.update(repr(threshold).encode())
    return h.hexdigest()


def save_user_model(model: UserModel, directory,
                    params: ForestParams | None = None) -> str:
    """Write the model bundle; returns its content hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    forest_json = model.forest.to_json()
    schema_json = model.schema.to_json()
    digest = _content_hash(forest_json, schema_json, model.threshold)
    meta = {
        "user_id": model.user_id,
        "threshold": model.threshold,
        "training_record_count": model.training_record_count,
        "n_dims": model.forest.n_dims,
        "content_hash": digest,
    }
    if params is not None:
        meta["params"] = params.to_dict()
    (directory / _FOREST_FILE).write_text(forest_json)
    (directory / _SCHEMA_FILE).write_text(schema_json)
    (directory / _META_FILE).write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":"))
    )
    return digest


def load_user_model(directory) -> UserModel:
    directory = Path(directory)
    meta = json.loads((directory / _META_FILE).read_text())
    forest = Forest.from_json((directory / _FOREST_FILE).read_text())
    schema = FeatureSchema.from_json((directory / _SCHEMA_FILE).read_text())
    if meta.get("n_dims") is not None and forest.n_dims is None:
        # all-leaf forests carry no dimension hint of their own
        object.__setattr__(forest, "n_dims", int(meta["n_dims"]))
    return UserModel(
        user_id=meta["user_id"],
        schema=schema,
        forest=forest,
        threshold=float(meta["threshold"]),
        training_record_count=int(meta.get("training_record_count", 0)),
    )
