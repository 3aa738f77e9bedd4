"""Record types and their JSONL encodings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

RECORD_FIELDS = ("id", "input", "output", "task", "split")
MEMBER_FIELDS = ("id", "document", "question_answering_task", "sentence_completion_task")
NONMEMBER_FIELDS = ("meta", "document")
PROBE_FIELDS = ("question", "options", "answer_index", "subject_tag")
PRETRAIN_FIELDS = ("id", "text", "kind")

TASKS = {1: "creative", 2: "pii_biography", 3: "pretrain_doc"}
SPLITS = ("forget", "retain")
STYLES = ("sc", "qa")


class JsonlError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Record:
    id: str
    input: str
    output: str
    task: int
    split: str

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"record id {self.id!r} must end in '_sc' or '_qa'")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split value {self.split!r}")

    @property
    def style(self) -> str:
        return self.id.rsplit("_", 1)[-1] if "_" in self.id else ""

    @property
    def doc_key(self) -> str:
        return self.id.rsplit("_", 1)[0]

    @property
    def text(self) -> str:
        """The full training text: input and output joined by one space."""
        return f"{self.input} {self.output}"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}


@dataclass(frozen=True)
class MiaMember:
    id: str
    document: str
    question_answering_task: dict
    sentence_completion_task: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MiaNonMember:
    meta: dict
    document: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProbeQuestion:
    question: str
    options: tuple
    answer_index: int
    subject_tag: str

    def __post_init__(self):
        if len(self.options) != 4:
            raise ValueError("probe questions need exactly 4 options")
        if len(set(self.options)) != 4:
            raise ValueError(f"options not pairwise distinct: {self.options}")
        if not 0 <= self.answer_index < 4:
            raise ValueError("answer_index out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = list(self.options)
        return d


@dataclass(frozen=True)
class PretrainDoc:
    id: str
    text: str
    kind: str = field(default="fact")

    def to_dict(self) -> dict:
        return asdict(self)


def _dump(objs: Iterable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for o in objs:
            d = o.to_dict() if hasattr(o, "to_dict") else o
            f.write(json.dumps(d, ensure_ascii=False) + "\n")


def _load(path, required: tuple, build):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(path, lineno, f"malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise JsonlError(path, lineno, "expected a JSON object")
            for name in required:
                if name not in obj:
                    raise JsonlError(path, lineno, f"missing field {name!r}")
            try:
                out.append(build(obj))
            except (ValueError, TypeError) as exc:
                raise JsonlError(path, lineno, str(exc)) from exc
    return out


def write_jsonl(records: Iterable[Record], path) -> None:
    _dump(records, path)


def read_jsonl(path) -> list[Record]:
    def build(o):
        if o["split"] not in SPLITS:
            raise ValueError(f"unknown split value {o['split']!r}")
        return Record(str(o["id"]), o["input"], o["output"], int(o["task"]), o["split"])

    return _load(path, RECORD_FIELDS, build)


def write_members(members, path) -> None:
    _dump(members, path)


def read_members(path) -> list[MiaMember]:
    return _load(path, MEMBER_FIELDS, lambda o: MiaMember(**{k: o[k] for k in MEMBER_FIELDS}))


def write_nonmembers(nonmembers, path) -> None:
    _dump(nonmembers, path)


def read_nonmembers(path) -> list[MiaNonMember]:
    return _load(path, NONMEMBER_FIELDS, lambda o: MiaNonMember(dict(o["meta"]), o["document"]))


def write_probe(questions, path) -> None:
    _dump(questions, path)


def read_probe(path) -> list[ProbeQuestion]:
    return _load(path, PROBE_FIELDS, lambda o: ProbeQuestion(
        o["question"], tuple(o["options"]), int(o["answer_index"]), o["subject_tag"]))


def write_pretrain(docs, path) -> None:
    _dump(docs, path)


def read_pretrain(path) -> list[PretrainDoc]:
    return _load(path, PRETRAIN_FIELDS, lambda o: PretrainDoc(o["id"], o["text"], o["kind"]))
