"""Glue between the data stages and the model: prepare a corpus directory,
load it back, and build training examples.

Prepared artifacts (all deterministic given the seed):
  prepared/filtered.jsonl        records that survived filtering
  prepared/rejects.json          malformed-line report from ingestion
  prepared/split.json            train/test id manifests
  prepared/standardization.json  engagement z-score parameters (train-set fit)
  prepared/features.json         per-record feature vectors
  prepared/prepare_report.json   per-stage record counts
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .config import RunConfig
from .dataprep import (
    PrecomputedEmbeddings,
    PseudoHashEmbedder,
    StandardizationStats,
    extract_features,
    fit_standardization,
    ingest,
    keyword_filter,
    load_keywords,
    load_lexicon,
    noise_filter,
    split_train_test,
    write_jsonl,
)
from .ensemble import TrainExample


class PipelineError(RuntimeError):
    """A pipeline stage could not produce usable output."""


@dataclass
class PreparedData:
    records: list
    features: dict  # id -> FeatureVector
    train_ids: list
    test_ids: list
    stats: StandardizationStats

    def examples(self, ids, embedder, cfg) -> list:
        by_id = {r.id: r for r in self.records}
        out = []
        for rid in ids:
            record = by_id[rid]
            out.append(
                TrainExample(
                    seq=embedder.embed_record(record, cfg.max_seq_len),
                    features=self.features[rid].as_array(cfg.feature_mask),
                    label=record.label,
                )
            )
        return out


def make_embedder(run_cfg: RunConfig):
    if run_cfg.provider == "file":
        return PrecomputedEmbeddings(run_cfg.embeddings_path)
    return PseudoHashEmbedder(run_cfg.model.d_emb, seed=run_cfg.model.seed)


def run_prepare(run_cfg: RunConfig, split_ratio: float = 0.8) -> dict:
    """Ingest, filter, extract features, and split; returns the stage counts."""
    result = ingest(run_cfg.input_path)
    keywords = load_keywords(run_cfg.keywords_path or None)
    lexicon = load_lexicon(run_cfg.lexicon_path or None)

    counts = {"ingested": len(result.records), "rejected_lines": len(result.rejects)}
    after_keywords = keyword_filter(result.records, keywords)
    counts["after_keyword_filter"] = len(after_keywords)
    filtered = noise_filter(after_keywords)
    counts["after_noise_filter"] = len(filtered)

    if not filtered:
        raise PipelineError(
            "no records survived filtering; attrition: "
            + ", ".join(f"{k}={v}" for k, v in counts.items())
        )

    train_recs, test_recs = split_train_test(filtered, split_ratio, run_cfg.model.seed)
    counts["train"] = len(train_recs)
    counts["test"] = len(test_recs)

    stats = fit_standardization(train_recs)
    features = {r.id: extract_features(r, lexicon, stats) for r in filtered}

    prep_dir = os.path.join(run_cfg.out_dir, "prepared")
    os.makedirs(prep_dir, exist_ok=True)
    write_jsonl(os.path.join(prep_dir, "filtered.jsonl"), filtered)
    _dump(prep_dir, "rejects.json", [{"line": ln, "reason": r} for ln, r in result.rejects])
    _dump(
        prep_dir,
        "split.json",
        {"train": [r.id for r in train_recs], "test": [r.id for r in test_recs]},
    )
    _dump(prep_dir, "standardization.json", stats.to_dict())
    _dump(prep_dir, "features.json", {rid: fv.to_dict() for rid, fv in features.items()})
    _dump(prep_dir, "prepare_report.json", counts)
    return counts


def load_prepared(out_dir: str) -> PreparedData:
    prep_dir = os.path.join(out_dir, "prepared")
    if not os.path.isdir(prep_dir):
        raise PipelineError(f"no prepared dataset under {out_dir}; run prepare first")
    records = ingest(os.path.join(prep_dir, "filtered.jsonl")).records
    with open(os.path.join(prep_dir, "features.json"), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    from .dataprep import FeatureVector

    features = {rid: FeatureVector(**d) for rid, d in raw.items()}
    with open(os.path.join(prep_dir, "split.json"), "r", encoding="utf-8") as fh:
        split = json.load(fh)
    with open(os.path.join(prep_dir, "standardization.json"), "r", encoding="utf-8") as fh:
        stats = StandardizationStats.from_dict(json.load(fh))
    return PreparedData(records, features, split["train"], split["test"], stats)


def _dump(directory: str, name: str, payload) -> None:
    with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
