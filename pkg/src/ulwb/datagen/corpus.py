"""Corpus generation: pretraining docs, forget/retain splits, MIA sets, utility probe."""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .records import (
    MiaMember,
    MiaNonMember,
    PretrainDoc,
    ProbeQuestion,
    Record,
    read_jsonl,
    read_members,
    read_nonmembers,
    read_pretrain,
    read_probe,
    write_jsonl,
    write_members,
    write_nonmembers,
    write_pretrain,
    write_probe,
)
from .templates import (
    FACT_ATTRIBUTES,
    FACT_TEMPLATES,
    Doc,
    Fact,
    WordPool,
    biography,
    creative,
    fact_doc,
    fact_world,
    narrative,
    probe_stem,
    split_for_completion,
)

UNSEEN_WINDOW = 32
SPLIT_FILES = {
    "forget_train": "forget_train.jsonl",
    "forget_val": "forget_val.jsonl",
    "retain_train": "retain_train.jsonl",
    "retain_val": "retain_val.jsonl",
}


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    forget_train: int = 128
    forget_val: int = 32
    retain_train: int = 132
    retain_val: int = 32
    mia_members: int = 32
    mia_nonmembers: int = 32
    probe: int = 64
    pretrain_docs: int = 2000
    fact_entities: int = 32
    narrative_fraction: float = 0.3

    def __post_init__(self):
        for name in ("forget_train", "forget_val", "retain_train", "retain_val",
                     "mia_members", "mia_nonmembers", "probe", "pretrain_docs", "fact_entities"):
            if getattr(self, name) <= 0:
                raise InfeasibleSpecError(f"{name} must be > 0")
        if self.mia_members > self.forget_train:
            raise InfeasibleSpecError("mia_members exceeds forget_train")
        if not 0 < self.narrative_fraction < 1:
            raise InfeasibleSpecError("narrative_fraction must be in (0, 1)")

    def scaled(self, factor: float) -> "CorpusSpec":
        """Counts multiplied by ``factor`` (rounded, floored at small minimums)."""
        def s(n, lo):
            return max(lo, int(round(n * factor)))
        return replace(
            self,
            forget_train=s(self.forget_train, 6), forget_val=s(self.forget_val, 6),
            retain_train=s(self.retain_train, 6), retain_val=s(self.retain_val, 6),
            mia_members=s(self.mia_members, 2), mia_nonmembers=s(self.mia_nonmembers, 2),
            probe=s(self.probe, 4), pretrain_docs=s(self.pretrain_docs, 40),
            fact_entities=s(self.fact_entities, 4),
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Corpus:
    pretrain: list[PretrainDoc]
    forget_train: list[Record]
    forget_val: list[Record]
    retain_train: list[Record]
    retain_val: list[Record]

    @property
    def forget(self) -> list[Record]:
        return self.forget_train + self.forget_val

    @property
    def retain(self) -> list[Record]:
        return self.retain_train + self.retain_val

    def training_texts(self) -> list[str]:
        """Every text a model sees while pretraining or memorizing."""
        return [d.text for d in self.pretrain] + [r.text for r in self.forget + self.retain]


@dataclass
class Dataset:
    corpus: Corpus
    members: list[MiaMember]
    nonmembers: list[MiaNonMember]
    probe: list[ProbeQuestion]
    spec: CorpusSpec = field(default_factory=CorpusSpec)


def _stream(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}/{name}")


def _new_id(rng: random.Random, used: set) -> str:
    while True:
        key = f"{rng.getrandbits(48):012x}"
        if key not in used:
            used.add(key)
            return key


def _records_for(doc: Doc, key: str, split: str, rng: random.Random, with_qa: bool = True) -> list[Record]:
    prefix, cont = split_for_completion(doc.text, rng)
    out = [Record(f"{key}_sc", prefix, cont, doc.task, split)]
    if with_qa:
        out.append(Record(f"{key}_qa", doc.question, doc.answer, doc.task, split))
    return out


def generate_corpus(spec: CorpusSpec) -> Corpus:
    pool = WordPool()
    facts = fact_world(_stream(spec.seed, "facts"), pool, spec.fact_entities)
    by_entity: dict[str, list[Fact]] = {}
    for f in facts:
        by_entity.setdefault(f.entity, []).append(f)
    entities = list(by_entity)

    sizes = {name: getattr(spec, name) for name in SPLIT_FILES}
    n_docs = {name: (n + 1) // 2 for name, n in sizes.items()}
    for name, n in n_docs.items():
        if n < 3:
            raise InfeasibleSpecError(f"{name}={sizes[name]} records cannot cover all three tasks in both styles")
    task3_needed = sum(len(range(2, n, 3)) for n in n_docs.values())
    n_narr = max(task3_needed, int(round(spec.pretrain_docs * spec.narrative_fraction)))
    n_fact = spec.pretrain_docs - n_narr
    if n_fact < len(entities):
        raise InfeasibleSpecError("pretrain_docs too small to state every fact at least once")

    prng = _stream(spec.seed, "pretrain")
    narr_docs = [narrative(prng, pool) for _ in range(n_narr)]
    fact_texts = []
    for i in range(n_fact):
        # every entity gets at least one doc, the rest are drawn at random
        e = entities[i] if i < len(entities) else prng.choice(entities)
        fact_texts.append(fact_doc(prng, by_entity[e]))

    ids: set = set()
    pretrain = [PretrainDoc(f"doc-{_new_id(prng, ids)}", d.text, "narrative") for d in narr_docs]
    pretrain += [PretrainDoc(f"doc-{_new_id(prng, ids)}", t, "fact") for t in fact_texts]
    prng.shuffle(pretrain)

    # task-3 records are excerpts of pretraining narratives, in a fixed order
    task3_pool = list(narr_docs[:task3_needed])
    rrng = _stream(spec.seed, "records")
    record_ids: set = set()
    splits: dict[str, list[Record]] = {}
    for name, count in sizes.items():
        split = name.split("_")[0]
        recs: list[Record] = []
        for i in range(n_docs[name]):
            task = i % 3 + 1
            if task == 1:
                doc = creative(rrng, pool)
            elif task == 2:
                doc, _ = biography(rrng, pool)
            else:
                doc = task3_pool.pop(0)
            with_qa = len(recs) + 2 <= count
            recs.extend(_records_for(doc, _new_id(rrng, record_ids), split, rrng, with_qa))
        splits[name] = recs
    return Corpus(pretrain, splits["forget_train"], splits["forget_val"],
                  splits["retain_train"], splits["retain_val"])


def _windows(texts: Iterable[str], width: int = UNSEEN_WINDOW) -> set:
    out = set()
    for t in texts:
        b = t.encode("utf-8")
        out.update(b[i : i + width] for i in range(len(b) - width + 1))
    return out


def is_unseen(document: str, seen_windows: set, width: int = UNSEEN_WINDOW) -> bool:
    b = document.encode("utf-8")
    return not any(b[i : i + width] in seen_windows for i in range(len(b) - width + 1))


def build_mia_sets(forget_train: list[Record], spec: CorpusSpec,
                   training_texts: Iterable[str] = ()) -> tuple[list[MiaMember], list[MiaNonMember]]:
    """Members: sampled forget-train documents. Non-members: fresh documents from the
    same templates on a separate seed stream, rejected if they share any 32-byte
    window with ``training_texts`` (forget_train is always included)."""
    sc = sorted((r for r in forget_train if r.style == "sc"), key=lambda r: r.id)
    qa = {r.doc_key: r for r in forget_train if r.style == "qa"}
    if spec.mia_members > len(sc):
        raise InfeasibleSpecError(
            f"mia_members={spec.mia_members} exceeds the {len(sc)} forget-train documents")
    mrng = _stream(spec.seed, "members")
    chosen = mrng.sample(sc, spec.mia_members)
    members = []
    for r in chosen:
        q = qa.get(r.doc_key)
        members.append(MiaMember(
            id=r.id,
            document=r.text,
            question_answering_task={"question": q.input, "answer": q.output} if q else {},
            sentence_completion_task={"input": r.input, "output": r.output},
        ))

    texts = list(training_texts) + [r.text for r in forget_train]
    seen = _windows(texts)
    used_words = set(re.findall(r"[A-Za-z]+", " ".join(texts).lower()))
    pool = WordPool(used_words)
    stream = f"{spec.seed}/nonmember"
    nrng = random.Random(stream)
    tasks = [r.task for r in chosen] or [1, 2, 3]
    nonmembers = []
    for i in range(spec.mia_nonmembers):
        task = tasks[i % len(tasks)]
        for _ in range(200):
            if task == 1:
                doc = creative(nrng, pool)
            elif task == 2:
                doc, _ = biography(nrng, pool)
            else:
                doc = narrative(nrng, pool)
            if is_unseen(doc.text, seen):
                break
        else:
            raise InfeasibleSpecError("could not generate an unseen non-member document")
        nonmembers.append(MiaNonMember({"source": "synthetic", "seed_stream": stream}, doc.text))
    return members, nonmembers


_FACT_PATTERNS = []
for _attr, _forms in FACT_TEMPLATES.items():
    for _form in _forms:
        _value = r"(?P<v>\w+ \w+)" if _attr == "founder" else r"(?P<v>\w+)"
        _pat = re.escape(_form).replace(r"\{e\}", r"(?P<e>\w+)").replace(r"\{v\}", _value)
        _FACT_PATTERNS.append((_attr, re.compile(_pat)))


def extract_facts(pretrain_docs: Iterable[PretrainDoc]) -> list[Fact]:
    """Recover (entity, attribute, value) triples stated in fact documents."""
    table: dict[tuple[str, str], set] = {}
    for d in pretrain_docs:
        if d.kind != "fact":
            continue
        for attr, pat in _FACT_PATTERNS:
            for m in pat.finditer(d.text):
                table.setdefault((m["e"], attr), set()).add(m["v"])
    facts = []
    for (e, attr), values in sorted(table.items()):
        if len(values) != 1:
            raise InfeasibleSpecError(f"fact {e}/{attr} is ambiguous: {sorted(values)}")
        facts.append(Fact(e, attr, values.pop()))
    return facts


def generate_probe_set(spec: CorpusSpec, pretrain_docs: list[PretrainDoc]) -> list[ProbeQuestion]:
    facts = extract_facts(pretrain_docs)
    by_attr: dict[str, list[Fact]] = {a: [f for f in facts if f.attribute == a] for a in FACT_ATTRIBUTES}
    if len(facts) < spec.probe or any(0 < len(v) < 4 for v in by_attr.values()):
        raise InfeasibleSpecError(f"fact pool of {len(facts)} cannot support {spec.probe} probe questions")
    rng = _stream(spec.seed, "probe")
    chosen = rng.sample(facts, spec.probe)
    positions = [i % 4 for i in range(spec.probe)]
    rng.shuffle(positions)
    out = []
    for f, pos in zip(chosen, positions):
        siblings = sorted({g.value for g in by_attr[f.attribute] if g.value != f.value})
        options = rng.sample(siblings, 3)
        options.insert(pos, f.value)
        out.append(ProbeQuestion(probe_stem(f.attribute, f.entity), tuple(options), pos, f.attribute))
    return out


def generate_dataset(spec: CorpusSpec) -> Dataset:
    corpus = generate_corpus(spec)
    members, nonmembers = build_mia_sets(corpus.forget_train, spec, corpus.training_texts())
    probe = generate_probe_set(spec, corpus.pretrain)
    return Dataset(corpus, members, nonmembers, probe, spec)


def save_dataset(ds: Dataset, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"pretrain": out / "pretrain.jsonl"}
    write_pretrain(ds.corpus.pretrain, paths["pretrain"])
    for name, fname in SPLIT_FILES.items():
        paths[name] = out / fname
        write_jsonl(getattr(ds.corpus, name), paths[name])
    paths["mia_members"] = out / "mia_members.jsonl"
    paths["mia_nonmembers"] = out / "mia_nonmembers.jsonl"
    paths["probe"] = out / "probe.jsonl"
    write_members(ds.members, paths["mia_members"])
    write_nonmembers(ds.nonmembers, paths["mia_nonmembers"])
    write_probe(ds.probe, paths["probe"])
    paths["spec"] = out / "corpus_spec.json"
    paths["spec"].write_text(json.dumps(ds.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    missing = [f for f in ["pretrain.jsonl", *SPLIT_FILES.values(), "mia_members.jsonl",
                           "mia_nonmembers.jsonl", "probe.jsonl"] if not (d / f).exists()]
    if missing:
        raise FileNotFoundError(f"dataset in {d} is missing {', '.join(missing)}")
    corpus = Corpus(read_pretrain(d / "pretrain.jsonl"),
                    *(read_jsonl(d / SPLIT_FILES[n]) for n in SPLIT_FILES))
    spec_path = d / "corpus_spec.json"
    spec = CorpusSpec.from_dict(json.loads(spec_path.read_text())) if spec_path.exists() else CorpusSpec()
    return Dataset(corpus, read_members(d / "mia_members.jsonl"),
                   read_nonmembers(d / "mia_nonmembers.jsonl"), read_probe(d / "probe.jsonl"), spec)
