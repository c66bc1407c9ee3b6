from __future__ import annotations

import hashlib
import json
from pathlib import Path


def derive_seed(master: int, *coords) -> int:
    """A 63-bit seed that depends only on ``master`` and ``coords``."""
    key = json.dumps([int(master), *[str(c) for c in coords]], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little") >> 1


def git_blob_hash(path: str | Path) -> str:
    """The object id ``git hash-object`` would assign to the file's content."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
