"""Fingerprints and provenance records for experiment outputs"""

import hashlib
import json
from datetime import datetime, timezone
from typing import Any, Dict


def generate_fingerprint(values: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a config key map"""
    canonical = json.dumps(values, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def provenance_line(fingerprint: str, subcommand: str, **details) -> str:
    """Deterministic `# provenance:` header: fingerprint, subcommand, sorted details"""
    parts = [f"config={fingerprint[:16]}", f"subcommand={subcommand}"]
    parts += [
        f"{key}={json.dumps(details[key], default=str)}" for key in sorted(details)
    ]
    return "# provenance: " + " ".join(parts)


def generated_line(now=None) -> str:
    now = now or datetime.now(timezone.utc)
    return "# generated: " + now.strftime("%Y-%m-%dT%H:%M:%SZ")
