"""Dataset manifests: UTF-8 TSV, one record per line.

Columns: id, image_path, label  and optionally  is_corrupted, original_label, plan.
Relative image paths are resolved against the manifest's directory by callers.
"""

import os
from dataclasses import dataclass
from typing import Optional

from .errors import DuplicateId, ParseError


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str
    label: str
    is_corrupted: Optional[bool] = None
    original_label: Optional[str] = None
    plan: Optional[str] = None


def read_manifest(path) -> list:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 6):
                raise ParseError(f"{path}:{lineno}: expected 3 or 6 fields, got {len(fields)}")
            sample_id, image_path, label = fields[:3]
            if not sample_id:
                raise ParseError(f"{path}:{lineno}: empty id")
            if sample_id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            if len(fields) == 6:
                flag_text = fields[3]
                if flag_text not in ("0", "1"):
                    raise ParseError(f"{path}:{lineno}: is_corrupted must be 0 or 1")
                entry = ManifestEntry(
                    sample_id, image_path, label,
                    is_corrupted=(flag_text == "1"),
                    original_label=fields[4] or None,
                    plan=fields[5] or None,
                )
            else:
                entry = ManifestEntry(sample_id, image_path, label)
            entries.append(entry)
    return entries


def write_manifest(entries, path) -> None:
    """Atomic write (temp file + rename). Ground-truth columns are emitted
    whenever any entry carries them."""
    with_truth = any(e.is_corrupted is not None for e in entries)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for e in entries:
            row = [e.sample_id, e.image_path, e.label]
            if with_truth:
                row += [
                    "1" if e.is_corrupted else "0",
                    e.original_label or "",
                    e.plan or "",
                ]
            fh.write("\t".join(row) + "\n")
    os.replace(tmp, path)


def manifest_dir(path) -> str:
    return os.path.dirname(os.path.abspath(path))
