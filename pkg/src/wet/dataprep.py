"""Ingestion, filtering, feature extraction, rule-assisted annotation,
train/test splitting, and embedding providers.

Input corpora are JSONL, one record per line with fields
``id, text, followers, likes, replies, retweets, created_at`` and an
optional ``label``. Sentiment features come from a bundled CSV lexicon
(``term,polarity,subjectivity``) that callers can replace with their own.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .branches import EmbeddedSequence
from .tensor import Tensor

NEUTRAL_BAND = 0.05  # |polarity| at or below this counts as neutral

ENGAGEMENT_FIELDS = ("followers", "likes", "replies", "retweets")

DEFAULT_EXCLUSION_PHRASES = (
    "suicide attack",
    "suicide bomb",
    "suicide bomber",
    "suicide bombing",
    "suicide squad",
)

SUICIDE_TERMS = (
    "suicide",
    "suicidal",
    "kill myself",
    "end my life",
    "end it all",
    "take my own life",
    "self harm",
    "hurt myself",
    "want to die",
    "die",
)

FIRST_PERSON = frozenset({"i", "im", "ive", "id", "ill", "me", "my", "myself", "mine"})

THIRD_PERSON = frozenset(
    {
        "he",
        "she",
        "they",
        "him",
        "her",
        "his",
        "hers",
        "their",
        "them",
        "themselves",
        "himself",
        "herself",
        "someone",
        "somebody",
        "people",
        "friend",
        "brother",
        "sister",
        "neighbor",
        "man",
        "woman",
        "guy",
        "girl",
        "news",
        "report",
        "article",
    }
)

NEGATIONS = frozenset(
    {"no", "not", "never", "wont", "wouldnt", "dont", "cant", "couldnt", "shouldnt", "isnt"}
)

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z0-9']+")


@dataclass
class TweetRecord:
    id: str
    text: str
    followers: int
    likes: int
    replies: int
    retweets: int
    created_at: str
    label: int | None = None  # 1 = stressor present, 0 = absent


@dataclass
class FeatureVector:
    subjectivity: float
    polarity: float
    sentiment: int
    followers: float
    likes: float
    replies: float
    retweets: float

    def as_array(self, mask=None) -> np.ndarray:
        mask = mask or (
            "subjectivity",
            "polarity",
            "sentiment",
            "followers",
            "likes",
            "replies",
            "retweets",
        )
        return np.array([float(getattr(self, name)) for name in mask])

    def to_dict(self) -> dict:
        return {
            "subjectivity": self.subjectivity,
            "polarity": self.polarity,
            "sentiment": self.sentiment,
            "followers": self.followers,
            "likes": self.likes,
            "replies": self.replies,
            "retweets": self.retweets,
        }


@dataclass
class LexiconEntry:
    term: str
    polarity: float
    subjectivity: float


@dataclass
class IngestResult:
    records: list
    rejects: list  # (line_number, reason) pairs


@dataclass
class AnnotationSuggestion:
    label: int
    rule: str


# ---- tokenization ---------------------------------------------------------------


def normalize_text(text: str) -> str:
    """Lowercase, strip hashtag markers (the tag word itself is kept)."""
    return text.lower().replace("#", "")


def tokenize(text: str) -> list:
    """Lowercased word tokens with apostrophes dropped ("won't" -> "wont")."""
    return [t.replace("'", "") for t in _TOKEN_RE.findall(normalize_text(text)) if t.replace("'", "")]


# ---- ingestion --------------------------------------------------------------------


def _parse_label(value) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("positive", "1", "true"):
            return 1
        if lowered in ("negative", "0", "false"):
            return 0
    raise ValueError(f"unrecognized label {value!r}")


def _parse_record(obj: dict) -> TweetRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    missing = [f for f in ("id", "text", "followers", "likes", "replies", "retweets", "created_at") if f not in obj]
    if missing:
        raise ValueError(f"missing fields: {missing}")
    text = obj["text"]
    if not isinstance(text, str) or not text.strip():
        raise ValueError("text must be a non-empty string")
    counts = {}
    for f in ENGAGEMENT_FIELDS:
        v = obj[f]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0 or v != int(v):
            raise ValueError(f"{f} must be a nonnegative integer")
        counts[f] = int(v)
    created = obj["created_at"]
    if not isinstance(created, str):
        raise ValueError("created_at must be an ISO-8601 string")
    label = _parse_label(obj["label"]) if obj.get("label") is not None else None
    return TweetRecord(
        id=str(obj["id"]),
        text=text,
        followers=counts["followers"],
        likes=counts["likes"],
        replies=counts["replies"],
        retweets=counts["retweets"],
        created_at=created,
        label=label,
    )


def ingest(path: str) -> IngestResult:
    """Parse a JSONL corpus; malformed lines land in the rejects report.

    Aborts when more than half of the non-blank lines are malformed, which
    usually means the file is not in the expected format at all.
    """
    records, rejects = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(_parse_record(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                rejects.append((lineno, str(exc)))
    total = len(records) + len(rejects)
    if total and len(rejects) > total / 2:
        raise ValueError(
            f"{len(rejects)} of {total} lines malformed; refusing to continue"
        )
    return IngestResult(records, rejects)


def write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.id,
                "text": r.text,
                "followers": r.followers,
                "likes": r.likes,
                "replies": r.replies,
                "retweets": r.retweets,
                "created_at": r.created_at,
            }
            if r.label is not None:
                obj["label"] = "positive" if r.label == 1 else "negative"
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---- filtering ---------------------------------------------------------------------


def _phrase_patterns(phrases) -> list:
    return [re.compile(r"\b" + re.escape(p.lower()) + r"\b") for p in phrases]


def keyword_filter(records, keywords) -> list:
    """Keep records whose text contains any keyword phrase on word boundaries."""
    if not keywords:
        raise ValueError("keyword list must be non-empty")
    patterns = _phrase_patterns(keywords)
    return [
        r
        for r in records
        if any(p.search(normalize_text(r.text)) for p in patterns)
    ]


def noise_filter(records, exclusion_phrases=DEFAULT_EXCLUSION_PHRASES) -> list:
    """Drop records containing URLs or any non-personal-event phrase."""
    patterns = _phrase_patterns(exclusion_phrases)
    kept = []
    for r in records:
        if _URL_RE.search(r.text):
            continue
        normalized = normalize_text(r.text)
        if any(p.search(normalized) for p in patterns):
            continue
        kept.append(r)
    return kept


# ---- lexicon and features ------------------------------------------------------------


def load_lexicon(path: str | None = None) -> dict:
    """Load a term -> LexiconEntry map; the bundled lexicon when path is None."""
    if path is None:
        text = resources.files("wet.data").joinpath("lexicon.csv").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    lexicon = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("term,"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"lexicon line {lineno}: expected term,polarity,subjectivity")
        term = parts[0].strip().lower()
        polarity, subjectivity = float(parts[1]), float(parts[2])
        if not -1.0 <= polarity <= 1.0 or not 0.0 <= subjectivity <= 1.0:
            raise ValueError(f"lexicon line {lineno}: values out of range")
        if term in lexicon:
            raise ValueError(f"lexicon line {lineno}: duplicate term {term!r}")
        lexicon[term] = LexiconEntry(term, polarity, subjectivity)
    return lexicon


def load_keywords(path: str | None = None) -> list:
    if path is None:
        text = resources.files("wet.data").joinpath("keywords.txt").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    keywords = [ln.strip().lower() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not keywords:
        raise ValueError("keyword file contains no keywords")
    return keywords


@dataclass
class StandardizationStats:
    """log1p-then-z-score parameters for the engagement counts, fit on train."""

    mean: dict
    std: dict

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(mean=dict(d["mean"]), std=dict(d["std"]))


def fit_standardization(records) -> StandardizationStats:
    mean, std = {}, {}
    for f in ENGAGEMENT_FIELDS:
        values = np.log1p([float(getattr(r, f)) for r in records])
        mean[f] = float(values.mean())
        s = float(values.std())
        std[f] = s if s > 1e-12 else 1.0
    return StandardizationStats(mean, std)


def extract_features(record: TweetRecord, lexicon: dict, stats: StandardizationStats) -> FeatureVector:
    """Sentiment features from lexicon hits plus standardized engagement.

    Polarity and subjectivity are means over matched tokens (0 with no
    match); the discrete sentiment is the polarity sign outside the neutral
    band. Engagement counts go through log1p then the train-set z-score.
    """
    hits = [lexicon[t] for t in tokenize(record.text) if t in lexicon]
    polarity = float(np.mean([h.polarity for h in hits])) if hits else 0.0
    subjectivity = float(np.mean([h.subjectivity for h in hits])) if hits else 0.0
    if polarity > NEUTRAL_BAND:
        sentiment = 1
    elif polarity < -NEUTRAL_BAND:
        sentiment = -1
    else:
        sentiment = 0
    standardized = {
        f: (np.log1p(float(getattr(record, f))) - stats.mean[f]) / stats.std[f]
        for f in ENGAGEMENT_FIELDS
    }
    return FeatureVector(
        subjectivity=subjectivity,
        polarity=polarity,
        sentiment=sentiment,
        followers=standardized["followers"],
        likes=standardized["likes"],
        replies=standardized["replies"],
        retweets=standardized["retweets"],
    )


# ---- rule-assisted annotation -----------------------------------------------------------


def _term_spans(tokens: list) -> list:
    """(start, end) token spans where a suicide term occurs."""
    spans = []
    for term in SUICIDE_TERMS:
        term_tokens = term.split()
        k = len(term_tokens)
        for i in range(len(tokens) - k + 1):
            if tokens[i : i + k] == term_tokens:
                spans.append((i, i + k))
    return spans


def _near_span(spans, indices, window: int) -> bool:
    for start, end in spans:
        for i in indices:
            if start - window <= i < end + window:
                return True
    return False


def annotate_assist(record: TweetRecord, window: int = 5) -> AnnotationSuggestion:
    """Suggest a label from pattern rules; a suggestion, not ground truth.

    Negative when no suicide term appears, when a negation sits just before
    a term (denial), or when only third-person subjects appear near a term.
    Positive when a first-person pronoun appears within the window of a term.
    """
    tokens = tokenize(record.text)
    spans = _term_spans(tokens)
    if not spans:
        return AnnotationSuggestion(0, "lack_of_connection")

    negation_idx = [i for i, t in enumerate(tokens) if t in NEGATIONS]
    for start, _ in spans:
        if any(start - 3 <= i < start for i in negation_idx):
            return AnnotationSuggestion(0, "denial")

    first_idx = [i for i, t in enumerate(tokens) if t in FIRST_PERSON]
    third_idx = [i for i, t in enumerate(tokens) if t in THIRD_PERSON]
    first_near = _near_span(spans, first_idx, window)
    third_near = _near_span(spans, third_idx, window)
    if third_near and not first_near:
        return AnnotationSuggestion(0, "third_person")
    if first_near:
        return AnnotationSuggestion(1, "first_person")
    return AnnotationSuggestion(0, "no_personal_connection")


# ---- splitting ----------------------------------------------------------------------------


def split_train_test(records, ratio: float, seed: int) -> tuple:
    """Deterministic stratified split; class proportions match within one
    record per class."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    by_label = {}
    for r in records:
        if r.label is None:
            raise ValueError(f"record {r.id} is unlabeled; cannot stratify")
        by_label.setdefault(r.label, []).append(r)
    for label, group in sorted(by_label.items()):
        if len(group) < 2:
            raise ValueError(
                f"class {label} has only {len(group)} record(s); need at least 2"
            )
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_train = int(round(ratio * len(group)))
        n_train = min(max(n_train, 1), len(group) - 1)  # both sides non-empty
        train.extend(group[i] for i in order[:n_train])
        test.extend(group[i] for i in order[n_train:])
    train = [train[i] for i in rng.permutation(len(train))]
    test = [test[i] for i in rng.permutation(len(test))]
    return train, test


# ---- embedding providers --------------------------------------------------------------------


class PseudoHashEmbedder:
    """Deterministic per-token unit vectors from a seeded hash.

    Stands in for a pretrained contextual encoder at desk scale: the same
    token always maps to the same vector, across runs and platforms.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError("embedding dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache = {}

    def token_vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        self._cache[token] = v
        return v

    def embed_text(self, text: str, max_len: int) -> EmbeddedSequence:
        tokens = tokenize(text)[:max_len] or ["<empty>"]
        matrix = np.stack([self.token_vector(t) for t in tokens])
        return EmbeddedSequence(Tensor(matrix), np.ones(len(tokens), dtype=bool))

    def embed_record(self, record: TweetRecord, max_len: int) -> EmbeddedSequence:
        return self.embed_text(record.text, max_len)


_EMB_MAGIC = b"WETEMB01"


def write_embeddings_file(path: str, matrices: dict) -> None:
    """Write an id -> float64 matrix container (little-endian, documented in
    the README); round-trips bit-exactly."""
    dims = {m.shape[1] for m in matrices.values()}
    if len(dims) > 1:
        raise ValueError(f"all matrices must share one dim, got {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(b"<")
        fh.write(struct.pack("<II", dim, len(matrices)))
        for rid, matrix in matrices.items():
            rid_bytes = rid.encode("utf-8")
            fh.write(struct.pack("<H", len(rid_bytes)))
            fh.write(rid_bytes)
            fh.write(struct.pack("<I", matrix.shape[0]))
            fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


class PrecomputedEmbeddings:
    """Reader for the embeddings container written by write_embeddings_file."""

    def __init__(self, path: str):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[: len(_EMB_MAGIC)] != _EMB_MAGIC:
            raise ValueError(f"{path} is not an embeddings container")
        offset = len(_EMB_MAGIC) + 1  # magic + endianness byte
        self.dim, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        self.matrices = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            rid = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (rows,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            n_bytes = rows * self.dim * 8
            matrix = np.frombuffer(blob[offset : offset + n_bytes], dtype="<f8")
            self.matrices[rid] = matrix.reshape(rows, self.dim).copy()
            offset += n_bytes

    def embed_record(self, record: TweetRecord, max_len: int) -> EmbeddedSequence:
        if record.id not in self.matrices:
            raise KeyError(f"record id {record.id!r} not present in embeddings file")
        matrix = self.matrices[record.id][:max_len]
        return EmbeddedSequence(Tensor(matrix), np.ones(matrix.shape[0], dtype=bool))
