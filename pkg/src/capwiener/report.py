"""Structured verification records."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


@dataclass
class CheckReport:
    check_name: str
    inputs_digest: str
    quantities: dict = field(default_factory=dict)
    verdict: str = INCONCLUSIVE
    tolerances_used: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_record(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_record(cls, rec: dict) -> "CheckReport":
        return cls(**{k: rec[k] for k in cls.__dataclass_fields__ if k in rec})


def verdict_of(ok: bool, inconclusive: bool = False) -> str:
    if inconclusive:
        return INCONCLUSIVE
    return PASS if ok else FAIL
