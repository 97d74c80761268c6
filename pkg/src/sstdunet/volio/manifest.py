"""Dataset manifests: one JSON object per line.

Required keys are ``path``, ``subject_id`` and ``split``. ``mask`` (ground truth) and
``prediction`` (a precomputed predicted mask, used by mask-only evaluation) are optional.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from sstdunet.errors import ConfigError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    split: str
    mask: str | None = None
    prediction: str | None = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSONL manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        missing = {"path", "subject_id", "split"} - set(rec)
        if missing:
            raise ConfigError(f"{path}:{lineno}: missing keys {sorted(missing)}")
        if rec["split"] not in SPLITS:
            raise ConfigError(f"{path}:{lineno}: split {rec['split']!r} not in {SPLITS}")
        unknown = set(rec) - {"path", "subject_id", "split", "mask", "prediction"}
        if unknown:
            raise ConfigError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
        mask, pred = rec.get("mask"), rec.get("prediction")
        entries.append(ManifestEntry(
            path=str(base / rec["path"]), subject_id=str(rec["subject_id"]), split=rec["split"],
            mask=None if mask is None else str(base / mask),
            prediction=None if pred is None else str(base / pred),
        ))
    return entries


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    lines = [json.dumps({k: v for k, v in asdict(e).items() if v is not None}) for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")
