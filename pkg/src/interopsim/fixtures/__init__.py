"""Shipped fixture files: policy listings and scenario configs."""

from __future__ import annotations

import json
from pathlib import Path

FIXTURE_DIR = Path(__file__).parent

POLICY_CLASSES = ("p1_data_time", "p2_provenance", "p3_aggregate", "p4_time_range")


def policy_path(name: str) -> Path:
    return FIXTURE_DIR / "policies" / f"{name}.pol"


def policy_text(name: str) -> str:
    return policy_path(name).read_text(encoding="utf-8")


def policy_requests() -> dict:
    raw = (FIXTURE_DIR / "policies" / "requests.json").read_text(encoding="utf-8")
    return json.loads(raw)


def scenario_path(name: str) -> Path:
    return FIXTURE_DIR / f"{name}.scn"
