"""Corpus ingestion, vocabulary, batching, and the synthetic desk-scale corpus.

Tokenization is deliberately simple (lowercase, punctuation stripped,
whitespace split) so runs are reproducible from raw CSV alone.  The
vocabulary is built from training text only.
"""

import csv
import json
import re
from collections import Counter, namedtuple
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numkit.rng import derive

PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[^a-z0-9\s]+")


class DataError(ValueError):
    pass


def tokenize(text: str) -> list:
    return _TOKEN_RE.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Document:
    label: int
    tokens: tuple  # token ids, truncated to max_seq_len
    raw_length: int


@dataclass
class Vocabulary:
    token_to_id: dict
    id_to_token: list

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> tuple:
        return tuple(self.token_to_id.get(t, UNK_ID) for t in tokens)

    @classmethod
    def build(cls, token_lists, max_size: int) -> "Vocabulary":
        """Top `max_size` tokens by frequency (ties lexicographic); PAD/UNK extra."""
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
        id_to_token = ["<pad>", "<unk>"] + [t for t, _ in ranked]
        return cls({t: i for i, t in enumerate(id_to_token)}, id_to_token)


@dataclass
class Dataset:
    name: str
    num_classes: int
    train: list
    test: list
    vocabulary: Vocabulary
    max_seq_len: int

    def __post_init__(self):
        for doc in self.test:
            if not 0 <= doc.label < self.num_classes:
                raise DataError(f"test label {doc.label} outside [0, {self.num_classes})")


@dataclass(frozen=True)
class CsvSchema:
    label_column: int
    text_columns: tuple
    one_based_labels: bool
    num_classes: int
    max_vocab_size: int = 30000
    max_seq_len: int = 64


def load_csv(path, schema: CsvSchema, test_path=None, name: str = "csv") -> Dataset:
    """Load an AG-News-style CSV pair (train builds the vocabulary)."""
    train_rows = _read_rows(path, schema)
    test_rows = _read_rows(test_path, schema) if test_path else []
    vocab = Vocabulary.build((toks for _, toks in train_rows), schema.max_vocab_size)

    def to_docs(rows):
        return [
            Document(label, vocab.encode(toks[: schema.max_seq_len]), len(toks))
            for label, toks in rows
        ]

    return Dataset(name, schema.num_classes, to_docs(train_rows), to_docs(test_rows),
                   vocab, schema.max_seq_len)


def _read_rows(path, schema: CsvSchema):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            needed = max(schema.label_column, *schema.text_columns)
            if len(row) <= needed:
                raise DataError(f"{path}:{lineno}: expected at least {needed + 1} columns")
            try:
                label = int(row[schema.label_column])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label {row[schema.label_column]!r}")
            if schema.one_based_labels:
                label -= 1
            if not 0 <= label < schema.num_classes:
                raise DataError(f"{path}:{lineno}: label {label} outside [0, {schema.num_classes})")
            text = " ".join(row[c] for c in schema.text_columns)
            rows.append((label, tokenize(text)))
    if not rows:
        raise DataError(f"{path}: no rows")
    return rows


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    vocab_size: int
    train_docs_per_class: int
    test_docs_per_class: int
    doc_length: int
    topic_concentration: float
    seed: int

    def __post_init__(self):
        if min(self.num_classes, self.vocab_size, self.train_docs_per_class,
               self.test_docs_per_class, self.doc_length) < 1:
            raise DataError("synthetic spec counts must be positive")
        if self.topic_concentration <= 0:
            raise DataError("topic_concentration must be > 0")


def generate_synthetic(spec: SyntheticSpec, max_seq_len=None) -> Dataset:
    """Balanced corpus with class-conditional unigram topics drawn from a
    symmetric Dirichlet; small concentration gives near-disjoint classes."""
    max_seq_len = max_seq_len or spec.doc_length
    id_to_token = ["<pad>", "<unk>"] + [f"w{i}" for i in range(spec.vocab_size)]
    vocab = Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token)

    topics = []
    for c in range(spec.num_classes):
        rng = derive(spec.seed, "synthetic-topic", c)
        topics.append(rng.dirichlet(np.full(spec.vocab_size, spec.topic_concentration)))

    def sample_split(split, per_class):
        docs = []
        for c in range(spec.num_classes):
            rng = derive(spec.seed, "synthetic-docs", split, c)
            ids = rng.choice(spec.vocab_size, size=(per_class, spec.doc_length), p=topics[c]) + 2
            for row in ids:
                docs.append(Document(c, tuple(int(i) for i in row[:max_seq_len]), spec.doc_length))
        return docs

    return Dataset("synthetic", spec.num_classes,
                   sample_split("train", spec.train_docs_per_class),
                   sample_split("test", spec.test_docs_per_class),
                   vocab, max_seq_len)


Batch = namedtuple("Batch", ["token_ids", "labels"])


def make_batches(docs, batch_size: int, seed: int, pad_to: int) -> list:
    """Seeded shuffle, then fixed-size batches padded with PAD to `pad_to`."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if not docs:
        return []
    order = derive(seed, "batch-shuffle").permutation(len(docs))
    batches = []
    for start in range(0, len(docs), batch_size):
        chunk = [docs[i] for i in order[start : start + batch_size]]
        ids = np.full((len(chunk), pad_to), PAD_ID, dtype=np.int64)
        labels = np.empty(len(chunk), dtype=np.int64)
        for j, doc in enumerate(chunk):
            toks = doc.tokens[:pad_to]
            ids[j, : len(toks)] = toks
            labels[j] = doc.label
        batches.append(Batch(ids, labels))
    return batches


# ---------------------------------------------------------------------------
# bit-exact dataset serialization: JSON manifest + int32-LE token blob
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = []
    manifest_docs = {}
    for split in ("train", "test"):
        entries = []
        for doc in getattr(dataset, split):
            entries.append({"label": doc.label, "len": len(doc.tokens), "raw": doc.raw_length})
            blob.extend(doc.tokens)
        manifest_docs[split] = entries
    manifest = {
        "name": dataset.name,
        "num_classes": dataset.num_classes,
        "max_seq_len": dataset.max_seq_len,
        "id_to_token": dataset.vocabulary.id_to_token,
        "docs": manifest_docs,
    }
    (out_dir / "dataset.json").write_text(json.dumps(manifest), encoding="utf-8")
    np.asarray(blob, dtype="<i4").tofile(out_dir / "tokens.bin")


def load_dataset(in_dir) -> Dataset:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "dataset.json").read_text(encoding="utf-8"))
    tokens = np.fromfile(in_dir / "tokens.bin", dtype="<i4")
    vocab = Vocabulary({t: i for i, t in enumerate(manifest["id_to_token"])},
                       manifest["id_to_token"])
    splits = {}
    pos = 0
    for split in ("train", "test"):
        docs = []
        for entry in manifest["docs"][split]:
            toks = tuple(int(t) for t in tokens[pos : pos + entry["len"]])
            pos += entry["len"]
            docs.append(Document(entry["label"], toks, entry["raw"]))
        splits[split] = docs
    return Dataset(manifest["name"], manifest["num_classes"], splits["train"],
                   splits["test"], vocab, manifest["max_seq_len"])
