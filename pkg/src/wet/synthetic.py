"""Synthetic labeled corpus with a planted keyword + sentiment signal.

Positive records voice first-person distress with strongly negative lexicon
vocabulary; negative records mention the same topic in denial, third-person,
or awareness framings with positive vocabulary. Both classes survive the
keyword and noise filters, so the generated file can drive the full
prepare/train/evaluate pipeline deterministically.
"""

from __future__ import annotations

import numpy as np

from .dataprep import TweetRecord, write_jsonl

_POS_TEMPLATES = (
    "i feel so {neg} and {neg2} i want to {act}",
    "i cant take it anymore i keep thinking about how to {act}",
    "everything feels {neg} lately honestly i just want to {act}",
    "i am {neg} and alone nobody would care if i {act_past}",
    "another {neg} night i want to {act} and end the pain",
    "my life is {neg} i am tired of living and want to {act}",
    "i told nobody but i plan to {act} soon i feel {neg}",
    "feeling {neg} and {neg2} again maybe i should just {act}",
)

_POS_ACTS = ("end my life", "kill myself", "end it all", "die", "take my own life")
_POS_ACTS_PAST = ("ended my life", "killed myself", "was gone", "disappeared")

_NEG_TEMPLATES = (
    "the local news covered a suicide prevention walk today it was {pos}",
    "he said he would never think about suicide he seems {pos} these days",
    "i will not commit suicide life is {pos} and i feel {pos2}",
    "they talked about suicide awareness at school it felt {pos}",
    "she wrote a {pos} article about suicide prevention resources",
    "our community raised money for suicide prevention everyone was {pos}",
    "my friend recovered after therapy she is {pos} and grateful no more suicidal thoughts",
    "the report on suicide statistics says support lines help people feel {pos}",
)

_NEG_WORDS = (
    "hopeless",
    "worthless",
    "empty",
    "broken",
    "miserable",
    "unbearable",
    "exhausted",
    "numb",
    "trapped",
    "useless",
)

_POS_WORDS = (
    "hopeful",
    "grateful",
    "wonderful",
    "peaceful",
    "encouraging",
    "uplifting",
    "inspiring",
    "supportive",
    "joyful",
    "heartwarming",
)


def _timestamp(i: int) -> str:
    day = i % 28 + 1
    month = (i // 28) % 12 + 1
    return f"2024-{month:02d}-{day:02d}T{i % 24:02d}:{i % 60:02d}:00Z"


def synthetic_corpus(n: int = 2000, seed: int = 0, positive_fraction: float = 0.5) -> list:
    """Generate `n` labeled records, deterministically from `seed`."""
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    records = []
    for i in range(n):
        positive = i < n_pos
        if positive:
            template = _POS_TEMPLATES[rng.integers(len(_POS_TEMPLATES))]
            text = template.format(
                neg=_NEG_WORDS[rng.integers(len(_NEG_WORDS))],
                neg2=_NEG_WORDS[rng.integers(len(_NEG_WORDS))],
                act=_POS_ACTS[rng.integers(len(_POS_ACTS))],
                act_past=_POS_ACTS_PAST[rng.integers(len(_POS_ACTS_PAST))],
            )
            followers = int(rng.poisson(80))
            likes = int(rng.poisson(3))
            replies = int(rng.poisson(2))
            retweets = int(rng.poisson(1))
        else:
            template = _NEG_TEMPLATES[rng.integers(len(_NEG_TEMPLATES))]
            text = template.format(
                pos=_POS_WORDS[rng.integers(len(_POS_WORDS))],
                pos2=_POS_WORDS[rng.integers(len(_POS_WORDS))],
            )
            followers = int(rng.poisson(400))
            likes = int(rng.poisson(15))
            replies = int(rng.poisson(6))
            retweets = int(rng.poisson(10))
        records.append(
            TweetRecord(
                id=f"synth-{i:06d}",
                text=text,
                followers=followers,
                likes=likes,
                replies=replies,
                retweets=retweets,
                created_at=_timestamp(i),
                label=1 if positive else 0,
            )
        )
    order = rng.permutation(n)
    return [records[j] for j in order]


def write_corpus(path: str, records) -> None:
    write_jsonl(path, records)
