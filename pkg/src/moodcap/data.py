"""Corpus handling: tokenization, vocabulary, file formats, batching,
and the synthetic desk-scale corpus generator.

File formats owned here:

* features (binary): magic ``SAFT``, version u32, n_images u32, K u32,
  D u32, then per image a u16 id length, the UTF-8 id, and K*D
  little-endian f32 values (converted to f64 on load);
* captions (text): one record per line,
  ``image_id<TAB>sentiment<TAB>caption`` with sentiment in
  {pos, neg, neutral, none};
* lexicon (text): tab-separated records typed ADJ, NOUN, ANP or SYN.
"""

from __future__ import annotations

import string
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .metrics import AnpLexicon
from .model import END, PAD, SPECIAL_TOKENS, START, UNK, Sentiment, SpatialFeatures

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

SENTIMENT_LABELS = ("pos", "neg", "neutral", "none")


def normalize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace.

    Applied identically to training captions, generated captions and
    references before any metric sees them.
    """
    return text.lower().translate(_PUNCT_TABLE).split()


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Frozen word <-> index mapping with 4 reserved leading slots."""

    def __init__(self, words: list[str]):
        if list(words[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise ConfigError("vocabulary must start with the reserved special tokens")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("vocabulary contains duplicate words")

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def build(cls, texts: list[str], min_count: int = 1, cap: int = 9703) -> "Vocabulary":
        """Frequency-ranked vocabulary, ties lexicographic, truncated to cap.

        Everything excluded maps to <unk>.
        """
        if cap <= len(SPECIAL_TOKENS):
            raise ConfigError(f"vocabulary cap {cap} leaves no room for words")
        counts = Counter(t for text in texts for t in normalize(text))
        kept = sorted((w for w, c in counts.items() if c >= min_count),
                      key=lambda w: (-counts[w], w))
        return cls(list(SPECIAL_TOKENS) + kept[: cap - len(SPECIAL_TOKENS)])

    def id_of(self, word: str) -> int:
        return self.index.get(word, UNK)

    def word_of(self, idx: int) -> str:
        return self.words[idx]

    def encode(self, tokens: list[str]) -> list[int]:
        """Token ids wrapped in <start>/<end>."""
        return [START] + [self.id_of(t) for t in tokens] + [END]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.words[i] for i in ids if i not in (PAD, START, END)]


@dataclass
class RawCaption:
    image_id: str
    sentiment_label: str   # pos | neg | neutral | none
    text: str


@dataclass
class CaptionRecord:
    image_id: str
    tokens: list[int]                 # includes <start> and <end>
    sentiment: Sentiment | None       # None = unlabeled factual record
    raw_text: str


def read_caption_file(path: str | Path) -> list[RawCaption]:
    rows: list[RawCaption] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, "
                                 f"got {len(parts)}")
            image_id, label, text = parts
            if label not in SENTIMENT_LABELS:
                raise ParseError(f"{path}:{lineno}: sentiment must be one of "
                                 f"{SENTIMENT_LABELS}, got {label!r}")
            rows.append(RawCaption(image_id, label, text))
    return rows


def write_caption_file(path: str | Path, rows: list[RawCaption]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(f"{row.image_id}\t{row.sentiment_label}\t{row.text}\n")


def read_caption_file_with_scores(path: str | Path) -> list[tuple[str, str, str, float]]:
    """Generated-captions file: image_id, sentiment, text, log_prob."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, "
                                 f"got {len(parts)}")
            try:
                log_prob = float(parts[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad log_prob field: {exc}") from exc
            rows.append((parts[0], parts[1], parts[2], log_prob))
    return rows


def _sentiment_of(label: str) -> Sentiment | None:
    return None if label == "none" else Sentiment.from_name(label)


def make_records(rows: list[RawCaption], vocab: Vocabulary,
                 max_len: int = 20) -> list[CaptionRecord]:
    """Tokenize rows against a vocabulary; over-length captions are
    rejected with a report of every offender."""
    records = []
    too_long = []
    for row in rows:
        tokens = vocab.encode(normalize(row.text))
        if len(tokens) > max_len + 2:
            too_long.append(row.image_id)
            continue
        records.append(CaptionRecord(row.image_id, tokens, _sentiment_of(row.sentiment_label),
                                     row.text))
    if too_long:
        raise DataError(f"{len(too_long)} captions exceed max_len={max_len}: "
                        f"{too_long[:5]}{'...' if len(too_long) > 5 else ''}")
    return records


def load_captions(path: str | Path, vocab: Vocabulary, max_len: int = 20) -> list[CaptionRecord]:
    return make_records(read_caption_file(path), vocab, max_len)


# ----------------------------------------------------------------------
# feature store

FEATURE_MAGIC = b"SAFT"
FEATURE_VERSION = 1


class FeatureStore:
    """image_id -> spatial grid; every grid shares one (K, D)."""

    def __init__(self, grids: dict[str, SpatialFeatures]):
        if not grids:
            raise DataError("feature store is empty")
        shapes = {f.grid.shape for f in grids.values()}
        if len(shapes) != 1:
            raise DataError(f"inconsistent feature shapes across images: {sorted(shapes)}")
        self._grids = dict(grids)
        self.regions, self.feature_dim = next(iter(shapes))

    def __len__(self) -> int:
        return len(self._grids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._grids

    @property
    def image_ids(self) -> list[str]:
        return list(self._grids)

    def get(self, image_id: str) -> SpatialFeatures:
        if image_id not in self._grids:
            raise DataError(f"unknown image id {image_id!r} in feature store")
        return self._grids[image_id]

    def write(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<IIII", FEATURE_VERSION, len(self._grids),
                                 self.regions, self.feature_dim))
            for image_id, feats in self._grids.items():
                encoded = image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(feats.grid.astype("<f4").tobytes())


def load_features(path: str | Path) -> FeatureStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(blob) < 20:
        raise ParseError(f"{path}: truncated header ({len(blob)} bytes)")
    version, n_images, k, d = struct.unpack_from("<IIII", blob, 4)
    if version != FEATURE_VERSION:
        raise ParseError(f"{path}: unsupported feature file version {version}")
    offset = 20
    grids: dict[str, SpatialFeatures] = {}
    row_bytes = k * d * 4
    for _ in range(n_images):
        if offset + 2 > len(blob):
            raise ParseError(f"{path}: truncated record at offset {offset}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        image_id = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        if offset + row_bytes > len(blob):
            raise ParseError(f"{path}: truncated features for {image_id!r} at offset {offset}")
        grid = np.frombuffer(blob, dtype="<f4", count=k * d, offset=offset)
        offset += row_bytes
        if image_id in grids:
            raise ParseError(f"{path}: duplicate image id {image_id!r}")
        grids[image_id] = SpatialFeatures(image_id, grid.astype(np.float64).reshape(k, d))
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes after last record")
    return FeatureStore(grids)


# ----------------------------------------------------------------------
# lexicon io

def load_lexicon(path: str | Path) -> AnpLexicon:
    adjectives: dict[str, str] = {}
    nouns: set[str] = set()
    anps: dict[tuple[str, str], str] = {}
    synonyms: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            kind = parts[0]
            try:
                if kind == "ADJ" and len(parts) == 3:
                    adjectives[parts[1]] = parts[2]
                elif kind == "NOUN" and len(parts) == 2:
                    nouns.add(parts[1])
                elif kind == "ANP" and len(parts) == 4:
                    anps[(parts[1], parts[2])] = parts[3]
                elif kind == "SYN" and len(parts) == 3:
                    synonyms.setdefault(parts[1], set()).add(parts[2])
                else:
                    raise ParseError(f"{path}:{lineno}: malformed {kind!r} record")
            except ParseError:
                raise
    try:
        return AnpLexicon(adjectives, nouns, anps, synonyms)
    except DataError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_lexicon(lexicon: AnpLexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(lexicon.adjectives):
            fh.write(f"ADJ\t{word}\t{lexicon.adjectives[word]}\n")
        for word in sorted(lexicon.nouns):
            fh.write(f"NOUN\t{word}\n")
        for (adj, noun) in sorted(lexicon.anps):
            fh.write(f"ANP\t{adj}\t{noun}\t{lexicon.anps[(adj, noun)]}\n")
        written = set()
        for a in sorted(lexicon.synonyms):
            for b in sorted(lexicon.synonyms[a]):
                if (b, a) not in written:
                    fh.write(f"SYN\t{a}\t{b}\n")
                    written.add((a, b))


# ----------------------------------------------------------------------
# dataset assembly

def merge_datasets(factual: list[CaptionRecord],
                   sentimental: list[CaptionRecord]) -> tuple[list[CaptionRecord], dict[str, int]]:
    """Label the factual corpus neutral and concatenate.

    Factual records must arrive unlabeled; sentimental records must be
    positive or negative.
    """
    merged: list[CaptionRecord] = []
    for rec in factual:
        if rec.sentiment is not None:
            raise DataError(f"factual record for {rec.image_id!r} already carries "
                            f"a sentiment label")
        merged.append(CaptionRecord(rec.image_id, rec.tokens, Sentiment.NEUTRAL, rec.raw_text))
    for rec in sentimental:
        if rec.sentiment is None or rec.sentiment is Sentiment.NEUTRAL:
            raise DataError(f"sentimental record for {rec.image_id!r} must be "
                            f"positive or negative")
        merged.append(rec)
    counts = Counter(rec.sentiment.short for rec in merged)
    return merged, dict(counts)


@dataclass
class Batch:
    image_ids: list[str]
    tokens: np.ndarray       # (B, T_max) int64, <pad>-filled
    mask: np.ndarray         # (B, T_max) bool, True on real tokens
    sentiments: list[Sentiment | None]
    lengths: list[int]

    def records(self) -> list[CaptionRecord]:
        out = []
        for i, image_id in enumerate(self.image_ids):
            toks = [int(t) for t in self.tokens[i, : self.lengths[i]]]
            out.append(CaptionRecord(image_id, toks, self.sentiments[i], ""))
        return out


def make_batches(records: list[CaptionRecord], batch_size: int,
                 rng: np.random.Generator) -> list[Batch]:
    """Seeded shuffle, pad to the batch max length, keep the last partial."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(records))
    batches = []
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        t_max = max(len(r.tokens) for r in chunk)
        tokens = np.full((len(chunk), t_max), PAD, dtype=np.int64)
        mask = np.zeros((len(chunk), t_max), dtype=bool)
        for i, rec in enumerate(chunk):
            tokens[i, : len(rec.tokens)] = rec.tokens
            mask[i, : len(rec.tokens)] = True
        batches.append(Batch(
            image_ids=[r.image_id for r in chunk],
            tokens=tokens, mask=mask,
            sentiments=[r.sentiment for r in chunk],
            lengths=[len(r.tokens) for r in chunk],
        ))
    return batches


# ----------------------------------------------------------------------
# synthetic corpus

NOUN_POOL = ("cat", "dog", "house", "tree", "boat", "bird", "chair", "car",
             "lamp", "door")
NOUN_ALIASES = {"cat": "kitty", "dog": "pup", "house": "home", "tree": "pine",
                "boat": "ship", "bird": "crow", "chair": "seat", "car": "auto",
                "lamp": "light", "door": "gate"}
DEFAULT_POS = ("nice", "great", "happy", "sunny")
DEFAULT_NEG = ("dirty", "broken", "lonely", "bad")


@dataclass
class SynthSpec:
    """Knobs for the planted-signal toy corpus."""

    n_images: int = 200
    regions: int = 8
    feature_dim: int = 16
    n_objects: int = 3
    pos_adjectives: tuple[str, ...] = DEFAULT_POS
    neg_adjectives: tuple[str, ...] = DEFAULT_NEG
    signal: float = 3.0
    noise: float = 0.3
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        if self.n_objects > len(NOUN_POOL):
            raise ConfigError(f"at most {len(NOUN_POOL)} objects supported")
        if self.n_images < 3:
            raise ConfigError("need at least 3 images")


@dataclass
class SynthCorpus:
    features: FeatureStore
    train_rows: list[RawCaption]
    val_rows: list[RawCaption]
    test_rows: list[RawCaption]
    lexicon: AnpLexicon
    object_of: dict[str, str]          # image_id -> noun
    object_patterns: np.ndarray        # (n_objects, D) planted signal rows

    @property
    def caption_texts(self) -> list[str]:
        return [row.text for row in self.train_rows]


def synth_toy_corpus(spec: SynthSpec, seed: int) -> SynthCorpus:
    """Plant one object signature per image and template captions over it.

    Each image's grid is noise except for one region carrying an
    object-specific pattern. Training rows use one random
    polarity-matched adjective; validation and test rows enumerate every
    matching adjective so references cover all correct choices. Neutral
    rows carry no adjective.
    """
    rng = np.random.default_rng(seed)
    nouns = NOUN_POOL[: spec.n_objects]
    patterns = rng.normal(size=(spec.n_objects, spec.feature_dim))
    patterns /= np.linalg.norm(patterns, axis=1, keepdims=True)
    patterns *= spec.signal

    grids: dict[str, SpatialFeatures] = {}
    object_of: dict[str, str] = {}
    object_idx: dict[str, int] = {}
    for i in range(spec.n_images):
        image_id = f"img{i:04d}"
        obj = int(rng.integers(spec.n_objects))
        grid = rng.normal(scale=spec.noise, size=(spec.regions, spec.feature_dim))
        region = int(rng.integers(spec.regions))
        grid[region] += patterns[obj]
        grids[image_id] = SpatialFeatures(image_id, grid)
        object_of[image_id] = nouns[obj]
        object_idx[image_id] = obj

    n_test = max(1, int(spec.n_images * spec.test_fraction))
    n_val = max(1, int(spec.n_images * spec.val_fraction))
    ids = list(grids)
    test_ids = ids[:n_test]
    val_ids = ids[n_test:n_test + n_val]
    train_ids = ids[n_test + n_val:]

    def single_rows(image_ids: list[str]) -> list[RawCaption]:
        rows = []
        for image_id in image_ids:
            noun = object_of[image_id]
            rows.append(RawCaption(image_id, "neutral", f"a {noun}"))
            pos = spec.pos_adjectives[int(rng.integers(len(spec.pos_adjectives)))]
            rows.append(RawCaption(image_id, "pos", f"a {pos} {noun}"))
            neg = spec.neg_adjectives[int(rng.integers(len(spec.neg_adjectives)))]
            rows.append(RawCaption(image_id, "neg", f"a {neg} {noun}"))
        return rows

    def reference_rows(image_ids: list[str]) -> list[RawCaption]:
        rows = []
        for image_id in image_ids:
            noun = object_of[image_id]
            rows.append(RawCaption(image_id, "neutral", f"a {noun}"))
            for adj in spec.pos_adjectives:
                rows.append(RawCaption(image_id, "pos", f"a {adj} {noun}"))
            for adj in spec.neg_adjectives:
                rows.append(RawCaption(image_id, "neg", f"a {adj} {noun}"))
        return rows

    adjectives = {a: "pos" for a in spec.pos_adjectives}
    adjectives.update({a: "neg" for a in spec.neg_adjectives})
    noun_set = set(nouns)
    anps = {(a, n): "pos" for a in spec.pos_adjectives for n in nouns}
    anps.update({(a, n): "neg" for a in spec.neg_adjectives for n in nouns})
    synonyms = {n: {NOUN_ALIASES[n]} for n in nouns}
    lexicon = AnpLexicon(adjectives, noun_set, anps, synonyms)

    return SynthCorpus(
        features=FeatureStore(grids),
        train_rows=single_rows(train_ids),
        val_rows=reference_rows(val_ids),
        test_rows=reference_rows(test_ids),
        lexicon=lexicon,
        object_of=object_of,
        object_patterns=patterns,
    )


def write_synth_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": str(out / "features.saft"),
        "train_captions": str(out / "train.tsv"),
        "val_captions": str(out / "val.tsv"),
        "test_captions": str(out / "test.tsv"),
        "lexicon": str(out / "lexicon.tsv"),
    }
    corpus.features.write(paths["features"])
    write_caption_file(paths["train_captions"], corpus.train_rows)
    write_caption_file(paths["val_captions"], corpus.val_rows)
    write_caption_file(paths["test_captions"], corpus.test_rows)
    write_lexicon(corpus.lexicon, paths["lexicon"])
    return paths
