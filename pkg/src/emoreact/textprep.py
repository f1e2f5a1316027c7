"""Corpus curation: post filtering, dataset ingestion, preprocessing,
vocabulary, encoding, splits and the artificial-label augmentation."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .labels import (EMOTION, EMOTION_TO_REACTION, EMOTIONS, REACTION,
                     REACTION_INDEX, REACTION_TO_EMOTION, REACTIONS, class_names)

log = logging.getLogger(__name__)

PAD, UNK, NUM = "<pad>", "<unk>", "<num>"
SPECIALS = (PAD, UNK, NUM)
MAX_LEN = 30

# column order of the posts TSV
POST_COLUMNS = ("love", "wow", "haha", "sad", "angry")

EMOTION_SETS = ("affective", "isear", "fairy")


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Reaction posts


@dataclass(frozen=True)
class RawPost:
    text: str
    reaction_hits: Mapping[str, int]

    def __post_init__(self):
        for name, count in self.reaction_hits.items():
            if name not in REACTION_INDEX:
                raise DataError(f"unknown reaction {name!r}")
            if not isinstance(count, (int, np.integer)) or count < 0:
                raise DataError(f"reaction count for {name} must be a nonnegative integer, got {count!r}")


@dataclass(frozen=True)
class FilterConfig:
    tau: int = 20
    gamma: float = 0.4
    # "mass": max > gamma * (sum of the others); "each": max > gamma * count of every other class
    dominance: str = "mass"

    def __post_init__(self):
        if self.tau < 0 or self.gamma < 0:
            raise ValueError("tau and gamma must be nonnegative")
        if self.dominance not in ("mass", "each"):
            raise ValueError(f"unknown dominance rule {self.dominance!r}")


def post_label(post: RawPost, cfg: FilterConfig) -> str | None:
    """Dominant reaction of a post, or None when the post is filtered out."""
    counts = [int(post.reaction_hits.get(name, 0)) for name in REACTIONS]
    total = sum(counts)
    if total < cfg.tau:
        return None
    top = max(counts)
    winners = [i for i, c in enumerate(counts) if c == top]
    if len(winners) > 1:
        return None
    best = winners[0]
    others = [c for i, c in enumerate(counts) if i != best]
    if cfg.dominance == "mass":
        keep = top > cfg.gamma * sum(others)
    else:
        keep = all(top > cfg.gamma * c for c in others)
    return REACTIONS[best] if keep else None


def filter_posts(posts: Iterable[RawPost], cfg: FilterConfig = FilterConfig()) -> list[tuple[str, str]]:
    kept = []
    for post in posts:
        label = post_label(post, cfg)
        if label is not None:
            kept.append((post.text, label))
    return kept


def census(pairs: Iterable[tuple[str, str]], task: str = REACTION) -> dict[str, int]:
    """Count examples per class in canonical order."""
    counts = Counter(label for _, label in pairs)
    return {name: counts.get(name, 0) for name in class_names(task)}


# ---------------------------------------------------------------------------
# Preprocessing

_URL = re.compile(r"(?:https?://|www\.)\S+")
_NUMBER = re.compile(r"\d+(?:[.,]\d+)*")
_BRACKETS = re.compile(r"[()\[\]{}]")
_PUNCT = re.compile(r"([.,!?;:'\"#])")


def preprocess(text: str) -> list[str]:
    text = text.lower()
    text = _URL.sub(" ", text)
    text = _NUMBER.sub(f" {NUM} ", text)
    text = _BRACKETS.sub(" ", text)
    text = _PUNCT.sub(r" \1 ", text)
    return text.split()


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(SPECIALS)}
        for tok in self.tokens:
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = len(self.index)

    def __len__(self):
        return len(self.index)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in (*SPECIALS, *self.tokens):
            h.update(tok.encode("utf-8") + b"\n")
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(token_streams: Iterable[Sequence[str]], vocab_size: int = 10000) -> Vocabulary:
    """Keep the ``vocab_size`` most frequent tokens; ties break lexicographically."""
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    counts: Counter = Counter()
    for tokens in token_streams:
        counts.update(t for t in tokens if t not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if not ranked:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocabulary([tok for tok, _ in ranked[:vocab_size]])


# ---------------------------------------------------------------------------
# Examples and corpora


@dataclass(frozen=True)
class Record:
    """A text before encoding: preprocessed tokens plus its label."""

    text: str
    tokens: tuple[str, ...]
    task: str | None = None
    label: str | None = None
    source: str = "posts"


@dataclass(frozen=True)
class Example:
    ids: tuple[int, ...]
    task: str | None = None
    label: int | None = None
    text: str = ""
    source: str = "posts"

    def __post_init__(self):
        if not self.ids:
            raise DataError("example has no tokens")
        if self.task is None:
            if self.label is not None:
                raise DataError("unlabeled example carries a label")
        else:
            n = len(class_names(self.task))
            if self.label is None or not 0 <= self.label < n:
                raise DataError(f"bad {self.task} label {self.label!r}")

    @property
    def y(self) -> np.ndarray:
        """One-hot label vector; the all-zero dummy vector when unlabeled."""
        if self.task is None:
            return np.zeros(0)
        v = np.zeros(len(class_names(self.task)))
        v[self.label] = 1.0
        return v


@dataclass
class Corpus:
    T_r: list = field(default_factory=list)
    T_e: list = field(default_factory=list)
    T_u: list = field(default_factory=list)

    def all(self) -> list:
        return [*self.T_r, *self.T_e, *self.T_u]

    def __len__(self):
        return len(self.T_r) + len(self.T_e) + len(self.T_u)

    def sizes(self) -> dict[str, int]:
        return {"T_r": len(self.T_r), "T_e": len(self.T_e), "T_u": len(self.T_u)}


def make_record(text: str, task: str | None = None, label: str | None = None, source: str = "posts") -> Record:
    if task is not None and label not in class_names(task):
        raise DataError(f"unknown {task} label {label!r}")
    return Record(text, tuple(preprocess(text)), task, label, source)


def encode_example(tokens: Sequence[str], vocab: Vocabulary, max_len: int = MAX_LEN,
                   task: str | None = None, label: str | int | None = None,
                   text: str = "", source: str = "posts") -> Example:
    ids = tuple(vocab.ids(tokens[:max_len]))
    if not ids:
        raise DataError("example is empty after preprocessing")
    if isinstance(label, str):
        label = class_names(task).index(label)
    return Example(ids, task, label, text, source)


def encode_corpus(corpus: Corpus, vocab: Vocabulary, max_len: int = MAX_LEN) -> Corpus:
    """Encode every record, dropping those that end up empty."""
    def enc(records):
        out = []
        for r in records:
            if not r.tokens:
                continue
            out.append(encode_example(r.tokens, vocab, max_len, r.task, r.label, r.text, r.source))
        return out

    return Corpus(enc(corpus.T_r), enc(corpus.T_e), enc(corpus.T_u))


# ---------------------------------------------------------------------------
# Splits


def allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Floor + largest-remainder allocation of ``n`` items; ties go to the earlier part."""
    raw = [n * f for f in fractions]
    counts = [math.floor(x + 1e-9) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def stratified_split(items: Sequence, labels: Sequence, fractions: Sequence[float], rng: random.Random) -> list[list]:
    by_class: dict = {}
    for item, label in zip(items, labels):
        by_class.setdefault(label, []).append(item)
    parts: list[list] = [[] for _ in fractions]
    for label in sorted(by_class, key=str):
        group = by_class[label]
        rng.shuffle(group)
        start = 0
        for part, count in zip(parts, allocate(len(group), fractions)):
            part.extend(group[start:start + count])
            start += count
    return parts


def make_splits(fb_labeled: Sequence[tuple[str, str]], fb_unlabeled: Sequence[str],
                affective: Sequence[tuple[str, str]], isear: Sequence[tuple[str, str]],
                fairy: Sequence[tuple[str, str]], test_emotion_set: str, seed: int = 0,
                fb_fractions=(0.70, 0.15, 0.15), emotion_fractions=(0.80, 0.20)) -> tuple[Corpus, Corpus, Corpus]:
    """Build train/validation/test corpora of :class:`Record`.

    Facebook posts go 70/15/15, the two remaining emotion sets 80/20 into
    train/validation, the held-out emotion set entirely into test, and all
    unlabeled posts into train.  A text already used is skipped wherever it
    reappears, which keeps every set disjoint.
    """
    datasets = {"affective": affective, "isear": isear, "fairy": fairy}
    if test_emotion_set not in datasets:
        raise ValueError(f"test_emotion_set must be one of {EMOTION_SETS}")
    if not fb_labeled:
        raise DataError("no labeled posts")
    for name, data in datasets.items():
        if not data:
            raise DataError(f"emotion dataset {name!r} is empty")

    rng = random.Random(seed)
    seen: set[str] = set()

    def fresh(pairs):
        out = []
        for text, label in pairs:
            if text in seen:
                continue
            seen.add(text)
            out.append((text, label))
        return out

    train, val, test = Corpus(), Corpus(), Corpus()

    fb = fresh(fb_labeled)
    fb_parts = stratified_split(fb, [lab for _, lab in fb], fb_fractions, rng)
    for corpus, part in zip((train, val, test), fb_parts):
        corpus.T_r.extend(make_record(t, REACTION, lab, "posts") for t, lab in part)

    for name in EMOTION_SETS:
        data = fresh(datasets[name])
        if name == test_emotion_set:
            test.T_e.extend(make_record(t, EMOTION, lab, name) for t, lab in data)
            continue
        tr, va = stratified_split(data, [lab for _, lab in data], emotion_fractions, rng)
        train.T_e.extend(make_record(t, EMOTION, lab, name) for t, lab in tr)
        val.T_e.extend(make_record(t, EMOTION, lab, name) for t, lab in va)

    unlabeled = fresh((t, None) for t in fb_unlabeled)
    train.T_u.extend(make_record(t, None, None, "unlabeled") for t, _ in unlabeled)
    return train, val, test


# ---------------------------------------------------------------------------
# Ingestion


ISEAR_MAP = {
    "anger": "anger", "disgust": "disgust", "fear": "fear", "joy": "happiness",
    "happiness": "happiness", "sadness": "sadness", "surprise": "surprise",
    "shame": None, "guilt": None,
}

# the Fairy Tales annotation codes plus plain class names
FAIRY_MAP = {
    "a": "anger", "angry": "anger", "anger": "anger",
    "d": "disgust", "disgusted": "disgust", "disgust": "disgust",
    "f": "fear", "fearful": "fear", "fear": "fear",
    "h": "happiness", "happy": "happiness", "happiness": "happiness", "joy": "happiness",
    "sa": "sadness", "sad": "sadness", "sadness": "sadness",
    "su": "surprise", "su+": "surprise", "su-": "surprise", "surprised": "surprise", "surprise": "surprise",
    "n": None, "neutral": None,
}


def _rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield lineno, row


def _skip(path, lineno, reason, counter):
    counter[0] += 1
    log.warning("%s:%d: skipped malformed row (%s)", path, lineno, reason)


def _affective_label(scores: list[int]) -> str | None:
    top = max(scores)
    if scores.count(top) > 1:
        return None
    return EMOTIONS[scores.index(top)]


def _fairy_label(labels: list[str]) -> str | None:
    mapped = [FAIRY_MAP.get(lab.strip().lower(), "?") for lab in labels]
    if "?" in mapped:
        raise DataError(f"unknown Fairy Tales label in {labels}")
    if len(mapped) == 1:
        return mapped[0]
    counts = Counter(m for m in mapped if m is not None)
    if not counts:
        return None
    label, n = counts.most_common(1)[0]
    need = 3 if label == "disgust" else 4
    return label if n >= need else None


def ingest_emotion_dataset(path, format: str) -> list[tuple[str, str]]:
    """Read one of the emotion TSV formats and apply its labeling rules.

    Malformed rows are logged with their line number and skipped.
    """
    if format not in EMOTION_SETS:
        raise ValueError(f"format must be one of {EMOTION_SETS}")
    out: list[tuple[str, str]] = []
    skipped = [0]
    for lineno, row in _rows(path):
        if lineno == 1 and len(row) > 1 and row[1].strip().lower() in ("label", "anger", "l1"):
            continue
        text = row[0].strip()
        if not text:
            _skip(path, lineno, "empty text", skipped)
            continue
        if format == "affective":
            if len(row) != 7:
                _skip(path, lineno, f"expected 7 columns, got {len(row)}", skipped)
                continue
            try:
                scores = [int(x) for x in row[1:]]
            except ValueError:
                _skip(path, lineno, "non-integer score", skipped)
                continue
            if any(s < 0 or s > 100 for s in scores):
                _skip(path, lineno, "score outside 0..100", skipped)
                continue
            label = _affective_label(scores)
        elif format == "isear":
            if len(row) != 2:
                _skip(path, lineno, f"expected 2 columns, got {len(row)}", skipped)
                continue
            key = row[1].strip().lower()
            if key not in ISEAR_MAP:
                _skip(path, lineno, f"unknown label {row[1]!r}", skipped)
                continue
            label = ISEAR_MAP[key]
        else:
            if len(row) not in (2, 5):
                _skip(path, lineno, f"expected 2 or 5 columns, got {len(row)}", skipped)
                continue
            try:
                label = _fairy_label(row[1:])
            except DataError as exc:
                _skip(path, lineno, str(exc), skipped)
                continue
        if label is not None:
            out.append((text, label))
    if skipped[0]:
        log.warning("%s: %d malformed rows skipped", path, skipped[0])
    return out


def read_posts(path) -> list[RawPost]:
    posts = []
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty posts file") from None
    names = [h.strip().lower() for h in header]
    if names[1:] != list(POST_COLUMNS):
        raise DataError(f"{path}: posts header must be text, {', '.join(POST_COLUMNS)}")
    for lineno, row in rows:
        if len(row) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
        try:
            counts = [int(x) for x in row[1:]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: counts must be base-10 integers") from None
        if any(c < 0 for c in counts):
            raise DataError(f"{path}:{lineno}: negative count")
        hits = {col.upper(): c for col, c in zip(POST_COLUMNS, counts)}
        posts.append(RawPost(row[0], hits))
    return posts


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Artificial labels


def _relabel(item, task: str, label: str):
    if isinstance(item, Example):
        return replace(item, task=task, label=class_names(task).index(label), source=item.source + "+artificial")
    return replace(item, task=task, label=label, source=item.source + "+artificial")


def _label_name(item) -> str:
    if isinstance(item, Example):
        return class_names(item.task)[item.label]
    return item.label


def artificial_augment(corpus: Corpus) -> Corpus:
    """Add a copy of every labeled example under the other task's mapped label."""
    new_e = [_relabel(x, EMOTION, REACTION_TO_EMOTION[_label_name(x)]) for x in corpus.T_r]
    new_r = [_relabel(x, REACTION, EMOTION_TO_REACTION[_label_name(x)]) for x in corpus.T_e]
    return Corpus(list(corpus.T_r) + new_r, list(corpus.T_e) + new_e, list(corpus.T_u))
