"""Static power profile documents, written by init modes and read by the estimator.

Format (YAML)::

    format: kubewatt-profile/v1
    provenance: BASE_INIT
    calibrated_at: '2026-10-14T07:08:00+00:00'
    nodes:
      sut: 199.1375
"""

from __future__ import annotations

import os
import tempfile
from datetime import datetime, timezone

import yaml

from .errors import ParseError
from .model import Provenance, StaticPowerProfile

FORMAT_TAG = "kubewatt-profile/v1"


def profile_to_text(profile: StaticPowerProfile) -> str:
    doc = {
        "format": FORMAT_TAG,
        "provenance": profile.provenance.value,
        "calibrated_at": datetime.fromtimestamp(profile.calibrated_at, tz=timezone.utc).isoformat(),
        "nodes": {node: float(w) for node, w in sorted(profile.static_watts.items())},
    }
    return yaml.safe_dump(doc, sort_keys=False)


def profile_from_text(text: str, source: str = "<profile>") -> StaticPowerProfile:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: profile must be a mapping")
    tag = doc.get("format")
    if tag != FORMAT_TAG:
        raise ParseError(f"{source}: unsupported profile format {tag!r}, expected {FORMAT_TAG}")
    try:
        nodes = {str(k): float(v) for k, v in (doc.get("nodes") or {}).items()}
        provenance = Provenance(doc.get("provenance", "MANUAL"))
        stamp = doc.get("calibrated_at", 0)
        if isinstance(stamp, datetime):
            calibrated_at = stamp.timestamp()
        elif isinstance(stamp, str):
            calibrated_at = datetime.fromisoformat(stamp.replace("Z", "+00:00")).timestamp()
        else:
            calibrated_at = float(stamp)
        if not nodes:
            raise ValueError("profile lists no nodes")
        return StaticPowerProfile(nodes, provenance, calibrated_at)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{source}: {exc}") from exc


def write_profile(profile: StaticPowerProfile, path: str) -> None:
    """Atomic write: a reader never sees a partially written profile."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".profile-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(profile_to_text(profile))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_profile(path: str) -> StaticPowerProfile:
    with open(path) as fh:
        return profile_from_text(fh.read(), path)
