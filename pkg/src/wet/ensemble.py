"""Branch combination, the assembled classifier, training, checkpoints.

Per-branch heads turn each representation into a probability; the ensemble
then combines those probabilities either uniformly, by weights derived from
per-branch validation error (lower error, higher weight), or by weights
trained end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .branches import BranchOutputs, EmbeddedSequence, FeatureBranch, TextBranch
from .config import ModelConfig
from .nn import Activation, Dense, Optimizer, compute_loss, dropout, prefixed
from .tensor import Tensor

# ---- weight containers and combination rules ------------------------------------


class EnsembleWeights:
    """Combination weights, one per branch output."""

    def __init__(self, values, mode: str):
        self.values = np.asarray(values, dtype=float)
        self.mode = mode
        n = self.values.size
        if n == 0:
            raise ValueError("ensemble needs at least one branch")
        if mode == "uniform":
            if not np.allclose(self.values, 1.0 / n):
                raise ValueError("uniform weights must all equal 1/n")
        elif mode == "valderived":
            if np.any(self.values < 0) or not np.isclose(self.values.sum(), 1.0):
                raise ValueError("validation-derived weights must be a distribution")
        elif mode != "learned":
            raise ValueError(f"unknown weights mode {mode!r}")

    @classmethod
    def uniform(cls, n: int) -> "EnsembleWeights":
        return cls(np.full(n, 1.0 / n), "uniform")

    def __len__(self):
        return self.values.size


def average_outputs(outputs) -> np.ndarray:
    """Plain mean of the per-branch probability vectors."""
    outputs = [np.asarray(o, dtype=float) for o in outputs]
    if not outputs:
        raise ValueError("cannot average an empty output list")
    lengths = {o.shape for o in outputs}
    if len(lengths) != 1:
        raise ValueError(f"output shapes differ: {sorted(lengths)}")
    return np.mean(outputs, axis=0)


def weighted_combine(outputs, weights) -> np.ndarray:
    """Weighted sum of per-branch probability vectors."""
    values = weights.values if isinstance(weights, EnsembleWeights) else np.asarray(weights)
    outputs = [np.asarray(o, dtype=float) for o in outputs]
    if len(outputs) != values.size:
        raise ValueError(f"{len(outputs)} outputs vs {values.size} weights")
    lengths = {o.shape for o in outputs}
    if len(lengths) != 1:
        raise ValueError(f"output shapes differ: {sorted(lengths)}")
    return sum(w * o for w, o in zip(values, outputs))


def derive_weights(validation_errors, temperature: float = 0.1) -> EnsembleWeights:
    """softmax(-errors / temperature): strictly lower error gets strictly
    higher weight; the limit of large temperature is uniform."""
    errors = np.asarray(validation_errors, dtype=float)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if np.any((errors < 0) | (errors > 1)):
        raise ValueError("validation errors must lie in [0, 1]")
    logits = -errors / temperature
    logits -= logits.max()
    e = np.exp(logits)
    return EnsembleWeights(e / e.sum(), "valderived")


# ---- the assembled model ----------------------------------------------------------


class ClassifierHead:
    """Fully connected layer of configured width, then a sigmoid unit."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.fc = Dense(cfg.d_repr, cfg.fc_width, rng)
        self.act = Activation(cfg.activation)
        self.out = Dense(cfg.fc_width, 1, rng)
        self.rate = cfg.dropout

    def __call__(self, rep: Tensor, training: bool = False, rng=None) -> Tensor:
        h = self.act(self.fc(rep.reshape(1, -1)))
        if training:
            h = dropout(h, self.rate, training, rng)
        return self.out(h).sigmoid().reshape(())

    def parameters(self) -> dict:
        out = prefixed("fc", self.fc.parameters())
        out.update(prefixed("act", self.act.parameters()))
        out.update(prefixed("out", self.out.parameters()))
        return out


class WetModel:
    """Dual-branch classifier with per-branch heads and ensemble weights."""

    def __init__(self, cfg: ModelConfig):
        errs = cfg.validate(grid_guard=False)
        if errs:
            raise ValueError("invalid model config: " + "; ".join(errs))
        self.cfg = cfg
        root = np.random.SeedSequence(cfg.seed)
        text_ss, feat_ss, heads_ss = root.spawn(3)
        self.text = TextBranch(cfg, text_ss)
        self.feature = FeatureBranch(cfg, feat_ss)
        n_outputs = cfg.n_text_layers + 1
        head_rngs = [np.random.default_rng(s) for s in heads_ss.spawn(n_outputs)]
        self.heads = [ClassifierHead(cfg, r) for r in head_rngs]
        # learned-mode parameter; other modes read weight values from numpy
        self.ens_weights = Tensor(
            np.full(n_outputs, 1.0 / n_outputs), requires_grad=True
        )
        self.weights_mode = cfg.weights_mode

    @property
    def n_outputs(self) -> int:
        return len(self.heads)

    def branch_outputs(
        self, seq: EmbeddedSequence, features: np.ndarray, training: bool = False, rng=None
    ) -> BranchOutputs:
        return BranchOutputs(
            text_reps=self.text(seq, training, rng),
            feature_rep=self.feature(features, training, rng),
        )

    def branch_probabilities(
        self, seq: EmbeddedSequence, features: np.ndarray, training: bool = False, rng=None
    ) -> list:
        outs = self.branch_outputs(seq, features, training, rng)
        reps = outs.text_reps + [outs.feature_rep]
        return [head(rep, training, rng) for head, rep in zip(self.heads, reps)]

    def combine(self, probs: list) -> Tensor:
        if self.weights_mode == "learned":
            total = self.ens_weights[0] * probs[0]
            for i in range(1, len(probs)):
                total = total + self.ens_weights[i] * probs[i]
            return total
        w = self.ens_weights.data
        total = float(w[0]) * probs[0]
        for i in range(1, len(probs)):
            total = total + float(w[i]) * probs[i]
        return total

    def forward(
        self, seq: EmbeddedSequence, features: np.ndarray, training: bool = False, rng=None
    ) -> tuple:
        probs = self.branch_probabilities(seq, features, training, rng)
        return self.combine(probs), probs

    def set_weights(self, weights: EnsembleWeights):
        if len(weights) != self.n_outputs:
            raise ValueError(f"expected {self.n_outputs} weights, got {len(weights)}")
        self.ens_weights.data = np.array(weights.values, dtype=float)
        self.weights_mode = weights.mode

    def current_weights(self) -> EnsembleWeights:
        return EnsembleWeights(self.ens_weights.data.copy(), self.weights_mode)

    def parameters(self) -> dict:
        out = prefixed("text", self.text.parameters())
        out.update(prefixed("feature", self.feature.parameters()))
        for i, head in enumerate(self.heads):
            out.update(prefixed(f"head{i}", head.parameters()))
        return out

    def buffers(self) -> dict:
        out = prefixed("text", self.text.buffers())
        out.update(prefixed("feature", self.feature.buffers()))
        return out

    def trainable_parameters(self) -> list:
        params = list(self.parameters().values())
        if self.weights_mode == "learned":
            params.append(self.ens_weights)
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.trainable_parameters())


def wet_forward(model: WetModel, seq: EmbeddedSequence, features: np.ndarray) -> float:
    """Eval-mode ensemble probability for one record."""
    combined, _ = model.forward(seq, features, training=False)
    return float(combined.data)


# ---- training -----------------------------------------------------------------------


@dataclass
class TrainExample:
    seq: EmbeddedSequence
    features: np.ndarray
    label: int


@dataclass
class TrainingReport:
    epoch_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    val_accuracies: list = field(default_factory=list)
    branch_val_errors: list = field(default_factory=list)
    final_weights: list = field(default_factory=list)
    weights_mode: str = ""
    epochs_run: int = 0
    stopped_early: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "epoch_losses": self.epoch_losses,
            "val_losses": self.val_losses,
            "val_accuracies": self.val_accuracies,
            "branch_val_errors": self.branch_val_errors,
            "weights_mode": self.weights_mode,
            "final_weights": self.final_weights,
        }


def _record_loss(model: WetModel, example: TrainExample, cfg: ModelConfig, rng) -> Tensor:
    target = Tensor(float(example.label))
    probs = model.branch_probabilities(example.seq, example.features, training=True, rng=rng)
    loss = compute_loss(cfg.loss, probs[0], target)
    for p in probs[1:]:
        loss = loss + compute_loss(cfg.loss, p, target)
    loss = loss / len(probs)
    if model.weights_mode == "learned":
        loss = loss + compute_loss(cfg.loss, model.combine(probs), target)
    return loss


def _branch_prob_matrix(model: WetModel, examples) -> np.ndarray:
    """Eval-mode per-branch probabilities, one row per example."""
    rows = []
    for ex in examples:
        probs = model.branch_probabilities(ex.seq, ex.features, training=False)
        rows.append([float(p.data) for p in probs])
    return np.array(rows)


def _combined_stats(prob_matrix, labels, weights, cfg: ModelConfig) -> tuple:
    """Ensemble loss and accuracy for fixed per-branch probabilities."""
    combined = prob_matrix @ weights
    loss = float(
        compute_loss(cfg.loss, Tensor(combined), Tensor(labels.astype(float))).data
    )
    accuracy = float(np.mean((combined >= cfg.threshold) == (labels == 1)))
    return loss, accuracy


def train(model: WetModel, train_set, val_set, cfg: ModelConfig) -> TrainingReport:
    """Mini-batch training of both branches and all heads.

    Validation-derived ensemble weights are recomputed every epoch from the
    per-branch validation error. Stops early when the validation loss has not
    improved for `cfg.patience` epochs, restoring the best parameters.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    errs = cfg.validate(grid_guard=False)
    if errs:
        raise ValueError("invalid config: " + "; ".join(errs))

    report = TrainingReport(weights_mode=model.weights_mode, config=cfg.to_dict())
    params = model.trainable_parameters()
    opt = Optimizer(cfg.optimizer, params, learning_rate=cfg.learning_rate)

    run_ss = np.random.SeedSequence([cfg.seed, 0x7E57])
    shuffle_rng, drop_rng = (np.random.default_rng(s) for s in run_ss.spawn(2))

    best_loss = np.inf
    best_state = None
    best_weights = None
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                loss = _record_loss(model, train_set[idx], cfg, drop_rng) / len(batch)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch}, "
                        f"record {int(idx)}"
                    )
                loss.backward()
                batch_loss += value
            opt.step()
            epoch_loss += batch_loss * len(batch)
        report.epoch_losses.append(epoch_loss / len(train_set))

        prob_matrix = _branch_prob_matrix(model, val_set)
        labels = np.array([ex.label for ex in val_set])
        branch_errors = np.mean(
            (prob_matrix >= cfg.threshold) != (labels[:, None] == 1), axis=0
        ).tolist()
        if model.weights_mode == "valderived":
            model.ens_weights.data = derive_weights(
                branch_errors, cfg.ensemble_temperature
            ).values
        val_loss, val_acc = _combined_stats(
            prob_matrix, labels, model.ens_weights.data, cfg
        )
        report.val_losses.append(val_loss)
        report.val_accuracies.append(val_acc)
        report.branch_val_errors.append(branch_errors)
        report.epochs_run = epoch + 1

        if val_loss < best_loss - cfg.early_stop_min_delta:
            best_loss = val_loss
            best_state = [p.data.copy() for p in params]
            best_weights = model.ens_weights.data.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                report.stopped_early = True
                break

    if best_state is not None:
        for p, data in zip(params, best_state):
            p.data = data
        model.ens_weights.data = best_weights
    report.final_weights = model.ens_weights.data.tolist()
    return report


# ---- checkpoints ----------------------------------------------------------------------

CHECKPOINT_FORMAT = "wet-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_payload(model: WetModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "weights_mode": model.weights_mode,
        "ensemble_weights": model.ens_weights.data.tolist(),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.parameters().items()
        },
        "buffers": {
            name: {"shape": list(b.shape), "data": b.reshape(-1).tolist()}
            for name, b in model.buffers().items()
        },
    }


def save_checkpoint(model: WetModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_payload(model), fh, indent=1)
        fh.write("\n")


def load_checkpoint(path: str) -> WetModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig.from_dict(payload["config"])
    model = WetModel(cfg)

    params = model.parameters()
    stored = payload["params"]
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={missing} extra={extra}")
    for name, t in params.items():
        entry = stored[name]
        if tuple(entry["shape"]) != t.shape:
            raise ValueError(f"shape mismatch for {name}")
        t.data = np.array(entry["data"], dtype=float).reshape(t.shape)

    buffers = model.buffers()
    for name, b in buffers.items():
        entry = payload["buffers"][name]
        b[...] = np.array(entry["data"], dtype=float).reshape(b.shape)

    model.weights_mode = payload["weights_mode"]
    model.ens_weights.data = np.array(payload["ensemble_weights"], dtype=float)
    return model
