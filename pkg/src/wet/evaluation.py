"""Metrics, paired significance testing, and the one-axis ablation harness.

The positive class throughout is "potential stressor present" (label 1).
Zero-division cases in the metric formulas return 0 and set a degenerate
flag rather than producing NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as _scipy_stats

from .config import ABLATION_GRID, ModelConfig
from .ensemble import WetModel, train


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds, truth) -> ConfusionMatrix:
    """Count the four outcomes; positive class is label 1."""
    preds = np.asarray(preds, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    return ConfusionMatrix(
        tp=int(np.sum((preds == 1) & (truth == 1))),
        fp=int(np.sum((preds == 1) & (truth == 0))),
        tn=int(np.sum((preds == 0) & (truth == 0))),
        fn=int(np.sum((preds == 0) & (truth == 1))),
    )


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict
    matrix: ConfusionMatrix
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": self.per_class,
            "confusion": {
                "tp": self.matrix.tp,
                "fp": self.matrix.fp,
                "tn": self.matrix.tn,
                "fn": self.matrix.fn,
            },
            "degenerate": self.degenerate,
        }


def _safe_div(num: float, den: float) -> tuple:
    return (num / den, False) if den > 0 else (0.0, True)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, recall, F1 (harmonic mean), plus both classes."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision, d1 = _safe_div(cm.tp, cm.tp + cm.fp)
    recall, d2 = _safe_div(cm.tp, cm.tp + cm.fn)
    f1, d3 = _safe_div(2.0 * precision * recall, precision + recall)
    neg_precision, d4 = _safe_div(cm.tn, cm.tn + cm.fn)
    neg_recall, d5 = _safe_div(cm.tn, cm.tn + cm.fp)
    neg_f1, d6 = _safe_div(2.0 * neg_precision * neg_recall, neg_precision + neg_recall)
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        per_class={
            "positive": {"precision": precision, "recall": recall, "f1": f1},
            "negative": {"precision": neg_precision, "recall": neg_recall, "f1": neg_f1},
        },
        matrix=cm,
        degenerate=any((d1, d2, d3, d4, d5, d6)),
    )


@dataclass
class TTestResult:
    statistic: float
    p_value: float
    degenerate: bool


def paired_t_test(scores_a, scores_b) -> TTestResult:
    """Two-sided paired Student's t-test with n-1 degrees of freedom.

    Zero-variance differences are degenerate: p = 1 when the vectors agree
    in mean, p = 0 (flagged) when a constant nonzero gap separates them.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score vectors must be 1-D and equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 paired scores")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, True)
        return TTestResult(float(np.inf) if mean > 0 else float(-np.inf), 0.0, True)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(_scipy_stats.t.sf(abs(t), df=n - 1))
    return TTestResult(float(t), p, False)


def kfold_indices(n: int, k: int = 5, seed: int = 0) -> list:
    """Deterministic k-fold partition of range(n) as (train, test) pairs;
    pairing unit for model-vs-model t-tests."""
    if k < 2 or k > n:
        raise ValueError("need 2 <= k <= n")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test = folds[i]
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        out.append((train, test))
    return out


# ---- model evaluation -------------------------------------------------------------


def evaluate_model(model: WetModel, examples, threshold: float = 0.5) -> MetricsReport:
    """Eval-mode ensemble predictions over labeled examples."""
    preds, truth = [], []
    for ex in examples:
        combined, _ = model.forward(ex.seq, ex.features, training=False)
        preds.append(int(float(combined.data) >= threshold))
        truth.append(int(ex.label))
    return metrics(confusion(preds, truth))


# ---- ablation harness --------------------------------------------------------------


@dataclass
class AblationCell:
    case_study: str
    value: object
    param_count: int
    test_accuracy: float
    status: str  # "ok" or "failed: <reason>"


def _cell_seed(master: int, case_idx: int, cell_idx: int) -> int:
    return int(np.random.SeedSequence([master, case_idx, cell_idx]).generate_state(1)[0])


def ablate(
    base_config: ModelConfig,
    dataset: tuple,
    seed: int = 0,
    grid: dict = None,
) -> list:
    """One-axis-at-a-time sweep around the base configuration.

    `dataset` is (train, val, test) example lists shared by every cell; each
    cell varies a single axis, trains from its own derived seed, and reports
    trainable-parameter count plus test accuracy. A diverging cell is
    recorded as failed and the sweep continues.
    """
    grid = grid or ABLATION_GRID
    train_set, val_set, test_set = dataset
    cells = []
    for case_idx, (axis, values) in enumerate(grid.items()):
        for cell_idx, value in enumerate(values):
            cfg = replace(
                base_config, **{axis: value}, seed=_cell_seed(seed, case_idx, cell_idx)
            )
            model = WetModel(cfg)
            try:
                train(model, train_set, val_set, cfg)
                acc = evaluate_model(model, test_set, cfg.threshold).accuracy
                cells.append(
                    AblationCell(axis, value, model.parameter_count(), acc, "ok")
                )
            except RuntimeError as exc:
                cells.append(
                    AblationCell(axis, value, model.parameter_count(), float("nan"),
                                 f"failed: {exc}")
                )
    return cells


def ablation_csv(cells, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_study", "value", "parameter_count", "test_accuracy", "status"])
        for c in cells:
            writer.writerow(
                [c.case_study, c.value, c.param_count, f"{c.test_accuracy:.6f}", c.status]
            )


def ablation_table(cells) -> str:
    """Human-readable aligned table, grouped by case study."""
    header = f"{'case study':<14} {'value':<28} {'params':>10} {'test acc':>9}  status"
    lines = [header, "-" * len(header)]
    last = None
    for c in cells:
        case = c.case_study if c.case_study != last else ""
        last = c.case_study
        lines.append(
            f"{case:<14} {str(c.value):<28} {c.param_count:>10} "
            f"{c.test_accuracy:>9.4f}  {c.status}"
        )
    return "\n".join(lines)


def ablation_plot(cells, path: str) -> None:
    """One accuracy-vs-value panel per case study."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cases = []
    for c in cells:
        if c.case_study not in cases:
            cases.append(c.case_study)
    fig, axes = plt.subplots(2, (len(cases) + 1) // 2, figsize=(4 * ((len(cases) + 1) // 2), 7))
    axes = np.atleast_1d(axes).ravel()
    for ax, case in zip(axes, cases):
        rows = [c for c in cells if c.case_study == case and c.status == "ok"]
        labels = [str(c.value) for c in rows]
        ax.plot(range(len(rows)), [c.test_accuracy for c in rows], marker="o")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(case)
        ax.set_ylabel("test accuracy")
    for ax in axes[len(cases):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
