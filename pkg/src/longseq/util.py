from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterator


class JsonlError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


def derive_seed(seed: int, purpose: str) -> int:
    """Stable 63-bit sub-seed for ``purpose``; independent of PYTHONHASHSEED."""
    digest = hashlib.sha256(f"{int(seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def round_half_up(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def read_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(lineno, record)``; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise JsonlError(path, lineno, f"malformed JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise JsonlError(path, lineno, "expected a JSON object")
            yield lineno, rec


def dumps(rec: Any) -> str:
    return json.dumps(rec, separators=(",", ":"), sort_keys=False)


def write_jsonl(path, records) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    return n
