"""JSON-lines corpora: one object per sequence with ``id``, ``text`` and an
optional ``token_count``."""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

# terminal punctuation followed by whitespace
_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
MAX_ID = 2**64


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def split_sentences(text: str) -> tuple[str, ...]:
    parts = tuple(p for p in _SENTENCE_BOUNDARY.split(text.strip()) if p)
    return parts or (text,)


@dataclass(frozen=True)
class Sequence:
    id: int
    text: str
    token_count: int
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not 0 <= self.id < MAX_ID:
            raise ValueError(f"sequence id {self.id} is not a 64-bit unsigned integer")
        if self.token_count < 1:
            raise ValueError(f"sequence {self.id} has no tokens")

    def to_record(self) -> dict:
        return {"id": self.id, "text": self.text, "token_count": self.token_count}


def make_sequence(seq_id, text: str, token_count: int | None = None, sentence_split: bool = False) -> Sequence:
    try:
        seq_id = int(seq_id)
    except (TypeError, ValueError):
        raise ValueError(f"sequence id {seq_id!r} is not an integer") from None
    if token_count is None:
        token_count = len(text.split())
    sentences = split_sentences(text) if sentence_split else (text,)
    return Sequence(seq_id, text, int(token_count), sentences)


def read_jsonl(path, sentence_split: bool = False) -> Iterator[Sequence]:
    """Stream sequences from ``path``; duplicate ids are an error."""
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                seq = make_sequence(obj["id"], obj["text"], obj.get("token_count"), sentence_split)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if seq.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {seq.id}")
            seen.add(seq.id)
            yield seq


def write_jsonl(path, records: Iterable[dict]) -> None:
    """Write records atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
