"""Feature dimension schemas: which log fields feed the detector, and how.

Categorical fields enter the forest as ordinals under a fixed, documented
ordering (any ordering works for isolation — it only has to be stable).
Time enters as two plain continuous dimensions, day-of-week (Monday = 0)
and hour-of-day.

Seven detector configurations are shipped: 1-4 use one categorical field
each (match rule, signature check, device check, browser), 5 uses the two
time dimensions, 6 combines the four categorical fields, 7 adds time to 6.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, MissingFieldError, UnknownCategoryError

__all__ = [
    "DimensionSpec",
    "FeatureSchema",
    "build_schema",
    "encode_categorical",
    "extract_features",
    "extract_matrix",
    "MATCH_RULE_ORDER",
    "SIGNATURE_CHECK_ORDER",
    "DEVICE_CHECK_ORDER",
    "BROWSER_ORDER",
    "SYSTEM_IDS",
]

# The 8 predefined authentication match rules, in their published listing order.
MATCH_RULE_ORDER = (
    "DEVICEIDCHECK",
    "DEVICEVELOCITY",
    "USER_DEVICE_ASSOCIATED_AND_DEVICE_MFP_MATCHED",
    "USER_DEVICE_ASSOCIATED_AND_DEVICE_MFP_NOT_MATCHED",
    "USER_DEVICE_NOT_ASSOCIATED_AND_DEVICE_MFP_MATCHED",
    "USER_DEVICE_NOT_ASSOCIATED_AND_DEVICE_MFP_NOT_MATCHED",
    "USERVELOCITY",
    "USERKNOWN",
)

SIGNATURE_CHECK_ORDER = ("N", "Y")

# NN: no device id present; YN: known device, not associated with the user;
# YY: device associated with the user.
DEVICE_CHECK_ORDER = ("NN", "YN", "YY")

# The 8 detected browsers, ordered alphabetically (see README for the
# detection rules that produce these names).
BROWSER_ORDER = (
    "Android Browser",
    "Chrome",
    "Firefox",
    "Internet Explorer",
    "Opera",
    "PSP",
    "Safari",
    "SeaMonkey",
)

SYSTEM_IDS = (1, 2, 3, 4, 5, 6, 7)


@dataclass(frozen=True)
class DimensionSpec:
    """One feature dimension: continuous, or categorical with an ordering.

    For categorical dimensions `ordering` lists the raw values; a value's
    ordinal is its index, so ordinals are dense 0..k-1.
    """

    name: str
    ordering: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.ordering is not None:
            if len(set(self.ordering)) != len(self.ordering):
                raise InvalidInputError(f"duplicate values in ordering for {self.name!r}")
            if len(self.ordering) == 0:
                raise InvalidInputError(f"empty ordering for {self.name!r}")

    @property
    def kind(self) -> str:
        return "continuous" if self.ordering is None else "categorical"

    @property
    def is_categorical(self) -> bool:
        return self.ordering is not None

    def decode(self, ordinal: float) -> str:
        """Inverse of encode_categorical for values in the ordering."""
        if self.ordering is None:
            raise InvalidInputError(f"dimension {self.name!r} is continuous")
        i = int(ordinal)
        if i != ordinal or not 0 <= i < len(self.ordering):
            raise InvalidInputError(f"ordinal {ordinal!r} out of range for {self.name!r}")
        return self.ordering[i]

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.ordering is not None:
            d["ordering"] = list(self.ordering)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DimensionSpec":
        ordering = tuple(d["ordering"]) if d.get("kind") == "categorical" else None
        return cls(name=d["name"], ordering=ordering)


@dataclass(frozen=True)
class FeatureSchema:
    """An ordered set of dimensions plus the system id it belongs to."""

    system_id: int
    dimensions: tuple[DimensionSpec, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate dimension names: {names}")

    @property
    def n_dims(self) -> int:
        return len(self.dimensions)

    def to_dict(self) -> dict:
        return {
            "system_id": self.system_id,
            "dimensions": [d.to_dict() for d in self.dimensions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            system_id=int(d["system_id"]),
            dimensions=tuple(DimensionSpec.from_dict(x) for x in d["dimensions"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        return cls.from_dict(json.loads(text))


_MATCH_RULE = DimensionSpec("match_rule", MATCH_RULE_ORDER)
_SIGNATURE = DimensionSpec("signature_check", SIGNATURE_CHECK_ORDER)
_DEVICE = DimensionSpec("device_check", DEVICE_CHECK_ORDER)
_BROWSER = DimensionSpec("browser", BROWSER_ORDER)
_DAY = DimensionSpec("day_of_week")
_HOUR = DimensionSpec("hour_of_day")

_SYSTEM_DIMENSIONS = {
    1: (_MATCH_RULE,),
    2: (_SIGNATURE,),
    3: (_DEVICE,),
    4: (_BROWSER,),
    5: (_DAY, _HOUR),
    6: (_MATCH_RULE, _SIGNATURE, _DEVICE, _BROWSER),
    7: (_MATCH_RULE, _SIGNATURE, _DEVICE, _BROWSER, _DAY, _HOUR),
}


def build_schema(system_id: int) -> FeatureSchema:
    """Return the fixed schema for one of the 7 shipped systems."""
    if system_id not in _SYSTEM_DIMENSIONS:
        raise InvalidInputError(f"system_id must be in 1..7, got {system_id!r}")
    return FeatureSchema(system_id=system_id, dimensions=_SYSTEM_DIMENSIONS[system_id])


def encode_categorical(spec: DimensionSpec, raw: str) -> float:
    """Map a raw categorical value to its ordinal."""
    if spec.ordering is None:
        raise InvalidInputError(f"dimension {spec.name!r} is continuous")
    try:
        return float(spec.ordering.index(raw))
    except ValueError:
        raise UnknownCategoryError(spec.name, raw) from None


def _field_value(record, name: str):
    if isinstance(record, dict):
        if name not in record:
            raise MissingFieldError(name)
        value = record[name]
    else:
        try:
            value = getattr(record, name)
        except AttributeError:
            raise MissingFieldError(name) from None
    if value is None:
        raise MissingFieldError(name)
    return value


def extract_features(schema: FeatureSchema, record) -> np.ndarray:
    """Turn one parsed log record into a feature vector for `schema`.

    `record` may be a LogRecord or any mapping/object exposing the dimension
    names as fields.
    """
    out = np.empty(schema.n_dims)
    for i, dim in enumerate(schema.dimensions):
        value = _field_value(record, dim.name)
        if dim.is_categorical:
            out[i] = encode_categorical(dim, value)
        else:
            out[i] = float(value)
    return out


def extract_matrix(schema: FeatureSchema, records, lenient: bool = False):
    """Extract features for many records at once.

    Returns (matrix, skipped) where skipped lists (index, reason) for records
    that failed extraction. With lenient=False the first failure raises.
    """
    rows = []
    skipped = []
    for i, rec in enumerate(records):
        try:
            rows.append(extract_features(schema, rec))
        except (MissingFieldError, UnknownCategoryError) as e:
            if not lenient:
                raise
            skipped.append((i, str(e)))
    if rows:
        matrix = np.vstack(rows)
    else:
        matrix = np.empty((0, schema.n_dims))
    return matrix, skipped
