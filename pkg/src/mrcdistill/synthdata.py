"""Synthetic evidence-annotated multiple-choice comprehension tasks.

Each document is a bag of ``subject relation object`` facts. The question
names a ``(subject, relation)`` key and the three candidates are objects
taken from the same document, so every candidate overlaps lexically with
the text. Evidence is the queried fact, either verbatim or with its relation
swapped for a paraphrase token that never occurs in any document.

Token id layout (all ranges disjoint)::

    0 pad | 1 <1> | 2 <2> | 3 <3> | subjects | relations | objects | paraphrases
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, CAND, SEP, QSTART = 0, 1, 2, 3
N_SPECIAL = 4
N_CANDIDATES = 3

# sentinel roles used by layouts and alignment
ROLE_CANDIDATE = "candidate"
ROLE_QUESTION = "question-segment"
ROLE_EVIDENCE = "evidence-segment"
ROLE_DOCUMENT = "document-segment"
ROLE_QSTART = "question-start"
SEGMENT_ROLES = (ROLE_QUESTION, ROLE_EVIDENCE, ROLE_DOCUMENT)
ALL_ROLES = (ROLE_CANDIDATE, ROLE_QUESTION, ROLE_EVIDENCE, ROLE_DOCUMENT, ROLE_QSTART)

VIEWS = ("teacher", "student")


class SpecError(ValueError):
    """Raised when dataset parameters are infeasible."""


class RenderError(ValueError):
    """Raised when an example cannot be rendered within the length budget."""


class DatasetParseError(ValueError):
    """Raised for a malformed JSONL record."""


@dataclass(frozen=True)
class TaskVocab:
    n_subjects: int = 40
    n_relations: int = 12
    n_objects: int = 40

    @property
    def subject_base(self) -> int:
        return N_SPECIAL

    @property
    def relation_base(self) -> int:
        return self.subject_base + self.n_subjects

    @property
    def object_base(self) -> int:
        return self.relation_base + self.n_relations

    @property
    def paraphrase_base(self) -> int:
        return self.object_base + self.n_objects

    @property
    def size(self) -> int:
        return self.paraphrase_base + self.n_relations

    def subjects(self) -> range:
        return range(self.subject_base, self.relation_base)

    def relations(self) -> range:
        return range(self.relation_base, self.object_base)

    def objects(self) -> range:
        return range(self.object_base, self.paraphrase_base)

    def paraphrases(self) -> range:
        return range(self.paraphrase_base, self.size)

    def synonym(self, relation: int) -> int:
        return self.paraphrase_base + (relation - self.relation_base)

    def unsynonym(self, token: int) -> int:
        """Map a paraphrase token back to its relation; other ids pass through."""
        if self.paraphrase_base <= token < self.size:
            return self.relation_base + (token - self.paraphrase_base)
        return token


@dataclass
class DatasetSpec:
    seed: int = 0
    n_examples: int = 0
    facts_per_doc: int = 8
    n_subjects: int = 40
    n_relations: int = 12
    n_objects: int = 40
    paraphrase_rate: float = 0.46
    confuser: bool = True

    @property
    def vocab(self) -> TaskVocab:
        return TaskVocab(self.n_subjects, self.n_relations, self.n_objects)

    def validate(self) -> None:
        k = self.facts_per_doc
        if self.n_examples < 0:
            raise SpecError(f"n_examples must be >= 0, got {self.n_examples}")
        if k < 3:
            raise SpecError(f"facts_per_doc must be >= 3, got {k}")
        if min(self.n_subjects, self.n_relations, self.n_objects) < 1:
            raise SpecError("vocabulary sizes must be positive")
        if k > self.n_subjects * self.n_relations:
            raise SpecError(
                f"facts_per_doc={k} exceeds the {self.n_subjects}x{self.n_relations} "
                "distinct (subject, relation) keys"
            )
        if k > self.n_objects:
            raise SpecError(f"facts_per_doc={k} exceeds n_objects={self.n_objects}")
        if self.confuser and self.n_relations < 2:
            raise SpecError("confuser facts need at least two relations")
        if not 0.0 <= self.paraphrase_rate <= 1.0:
            raise SpecError(f"paraphrase_rate must lie in [0, 1], got {self.paraphrase_rate}")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown dataset spec fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise SpecError(f"{path}: top level must be an object")
        return cls.from_dict(raw)


@dataclass
class Example:
    id: int
    document: list[int]
    question: list[int]
    candidates: list[list[int]]
    evidence: list[int]
    label: int
    paraphrased: bool

    @property
    def n_facts(self) -> int:
        return len(self.document) // 3


@dataclass(frozen=True)
class SentinelLayout:
    """Positions of the sentinel tokens inside one rendered sequence."""

    candidate_marks: tuple[int, ...]
    segment_marks: tuple[tuple[int, str], ...]
    question_start: int
    length: int = field(default=0, compare=False)

    def positions(self, role: str) -> list[int]:
        if role == ROLE_CANDIDATE:
            return list(self.candidate_marks)
        if role == ROLE_QSTART:
            return [self.question_start]
        return [pos for pos, r in self.segment_marks if r == role]

    def has_role(self, role: str) -> bool:
        return bool(self.positions(role))


def _example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index])


def generate_example(spec: DatasetSpec, index: int) -> Example:
    """Generate example ``index`` of ``spec``; independent of every other index."""
    rng = _example_rng(spec.seed, index)
    vocab = spec.vocab
    k = spec.facts_per_doc
    S, R = spec.n_subjects, spec.n_relations

    subj = int(rng.integers(S))
    rel = int(rng.integers(R))
    keys = [(subj, rel)]
    if spec.confuser:
        other = int(rng.integers(R - 1))
        keys.append((subj, other if other < rel else other + 1))
    used = set(keys)
    while len(keys) < k:
        key = (int(rng.integers(S)), int(rng.integers(R)))
        if key not in used:
            used.add(key)
            keys.append(key)
    objects = rng.choice(spec.n_objects, size=k, replace=False)

    facts = [
        (vocab.subject_base + s, vocab.relation_base + r, vocab.object_base + int(o))
        for (s, r), o in zip(keys, objects)
    ]
    gold = facts[0]
    if spec.confuser:
        distractors = [facts[1][2], facts[2 + int(rng.integers(k - 2))][2]]
    else:
        picks = rng.choice(np.arange(1, k), size=2, replace=False)
        distractors = [facts[int(i)][2] for i in picks]

    order = rng.permutation(k)
    document = [tok for i in order for tok in facts[int(i)]]

    cand_order = rng.permutation(N_CANDIDATES)
    pool = [gold[2], *distractors]
    candidates = [[pool[int(i)]] for i in cand_order]
    label = int(np.flatnonzero(cand_order == 0)[0])

    paraphrased = bool(rng.random() < spec.paraphrase_rate)
    rel_token = vocab.synonym(gold[1]) if paraphrased else gold[1]
    evidence = [gold[0], rel_token, gold[2]]

    return Example(
        id=index,
        document=document,
        question=[gold[0], gold[1]],
        candidates=candidates,
        evidence=evidence,
        label=label,
        paraphrased=paraphrased,
    )


def generate_dataset(spec: DatasetSpec, start: int = 0, stop: int | None = None) -> list[Example]:
    """Examples ``start..stop`` (default: all ``n_examples``) of ``spec``."""
    spec.validate()
    stop = spec.n_examples if stop is None else stop
    return [generate_example(spec, i) for i in range(start, stop)]


def lookup_answer(example: Example, source: str = "document", vocab: TaskVocab | None = None) -> int:
    """Brute-force answerer: find the fact matching the question key.

    ``source="evidence"`` reads only the evidence, mapping paraphrase tokens
    back through ``vocab``. Returns the candidate index, or -1 if unanswerable.
    """
    s, r = example.question
    if source == "document":
        triples = [example.document[i : i + 3] for i in range(0, len(example.document), 3)]
    elif source == "evidence":
        ev = example.evidence
        if vocab is not None:
            ev = [ev[0], vocab.unsynonym(ev[1]), ev[2]]
        triples = [ev]
    else:
        raise ValueError(f"unknown source {source!r}")
    hits = [t[2] for t in triples if t[0] == s and t[1] == r]
    if len(hits) != 1:
        return -1
    for j, cand in enumerate(example.candidates):
        if cand == [hits[0]]:
            return j
    return -1


# ---------------------------------------------------------------- rendering


def render_input(
    example: Example,
    view: str,
    max_len: int,
    pad_to: int | None = None,
) -> tuple[np.ndarray, np.ndarray, SentinelLayout]:
    """Flatten an example into ``(token_ids, mask, layout)``.

    Sequence: ``<1> c1 <1> c2 <1> c3 <2> <3> question [<2> evidence] <2> document``,
    where the bracketed evidence segment appears only in the teacher view.
    Documents that do not fit in ``max_len`` lose tokens from their tail.
    """
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    ids: list[int] = []
    cand_marks = []
    for cand in example.candidates:
        cand_marks.append(len(ids))
        ids.append(CAND)
        ids.extend(cand)
    seg_marks = [(len(ids), ROLE_QUESTION)]
    ids.append(SEP)
    qstart = len(ids)
    ids.append(QSTART)
    ids.extend(example.question)
    if view == "teacher":
        seg_marks.append((len(ids), ROLE_EVIDENCE))
        ids.append(SEP)
        ids.extend(example.evidence)
    seg_marks.append((len(ids), ROLE_DOCUMENT))
    ids.append(SEP)

    budget = max_len - len(ids)
    if budget < 0:
        raise RenderError(
            f"example {example.id}: {view} view needs {len(ids)} tokens before the "
            f"document, max_len={max_len}"
        )
    ids.extend(example.document[:budget])

    length = len(ids)
    total = length if pad_to is None else max(pad_to, length)
    token_ids = np.full(total, PAD, dtype=np.int64)
    token_ids[:length] = ids
    mask = np.zeros(total, dtype=np.int8)
    mask[:length] = 1
    layout = SentinelLayout(tuple(cand_marks), tuple(seg_marks), qstart, length)
    return token_ids, mask, layout


def render_batch(
    examples: Sequence[Example], view: str, max_len: int
) -> tuple[np.ndarray, np.ndarray, list[SentinelLayout]]:
    """Render and right-pad a batch to its longest member."""
    rendered = [render_input(ex, view, max_len) for ex in examples]
    width = max(len(r[0]) for r in rendered)
    ids = np.zeros((len(rendered), width), dtype=np.int64)
    mask = np.zeros((len(rendered), width), dtype=np.int8)
    for i, (t, m, _) in enumerate(rendered):
        ids[i, : len(t)] = t
        mask[i, : len(m)] = m
    return ids, mask, [r[2] for r in rendered]


# --------------------------------------------------------------------- JSONL

_FIELDS = ("id", "document", "question", "candidates", "evidence", "label", "paraphrased")


def write_jsonl(dataset: Iterable[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            record = asdict(ex)
            fh.write(json.dumps({k: record[k] for k in _FIELDS}, separators=(",", ":")))
            fh.write("\n")


def _parse_record(obj: dict) -> Example:
    missing = [k for k in _FIELDS if k not in obj]
    if missing:
        raise ValueError(f"missing fields {missing}")
    ex = Example(
        id=int(obj["id"]),
        document=[int(t) for t in obj["document"]],
        question=[int(t) for t in obj["question"]],
        candidates=[[int(t) for t in c] for c in obj["candidates"]],
        evidence=[int(t) for t in obj["evidence"]],
        label=int(obj["label"]),
        paraphrased=obj["paraphrased"],
    )
    if not isinstance(ex.paraphrased, bool):
        raise ValueError("paraphrased must be a boolean")
    if len(ex.candidates) != N_CANDIDATES or not 0 <= ex.label < N_CANDIDATES:
        raise ValueError("expected three candidates and a label in {0, 1, 2}")
    return ex


def read_jsonl(path: str | Path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(_parse_record(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                raise DatasetParseError(f"{path}:{lineno}: {exc}") from exc
    return out
