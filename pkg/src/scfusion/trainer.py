"""Classifier training on fused embeddings.

A fusion front end (the SCF layer or plain concatenation) feeds an MLP head
with rectifier hidden units and a logistic output. Gradients flow through the
head and, for the SCF path, back through every unrolled step of the field
dynamics. Parameters are plain ``dict[str, ndarray]`` so one Adam instance
can drive both parts.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import core
from .core import ScfModel
from .data import EmbeddingDataset, fold_indices, split_groups
from .errors import ConfigurationError, InputError, TrainingError

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.1
    dropout: float = 0.1
    hidden: tuple[int, ...] = (64,)
    threshold: float = 0.5
    # "running": epoch-mean of the minibatch statistics (dropout active);
    # "full": an extra inference pass over the training split
    train_metrics: str = "running"
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.eps <= 0 or self.lr <= 0:
            raise ConfigurationError("lr and eps must be positive")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("patience, max_epochs and batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in [0, 1)")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigurationError("dropout must be in [0, 1]")
        if self.train_metrics not in ("running", "full"):
            raise ConfigurationError("train_metrics must be 'running' or 'full'")


# ---------------------------------------------------------------------------
# MLP head


@dataclass
class MlpHead:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("MLP needs matching, non-empty weight and bias lists")
        if not self.dropout:
            self.dropout = [0.0] * (len(self.weights) - 1)
        if len(self.dropout) != len(self.weights) - 1:
            raise ConfigurationError("one dropout probability per hidden layer")
        if self.weights[-1].shape[1] != 1:
            raise ConfigurationError("output layer must have width 1")

    @classmethod
    def create(cls, input_dim: int, hidden: Sequence[int] = (64,), dropout: float = 0.0, seed=0) -> "MlpHead":
        rng = np.random.default_rng(seed)
        widths = [int(input_dim), *map(int, hidden), 1]
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            gain = 2.0 if i < len(widths) - 2 else 1.0
            weights.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(gain / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, [dropout] * len(hidden))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def get_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"head.W{i}"] = w.copy()
            out[f"head.b{i}"] = b.copy()
        return out

    def with_params(self, values: dict[str, np.ndarray]) -> "MlpHead":
        n = len(self.weights)
        return MlpHead(
            [np.array(values.get(f"head.W{i}", self.weights[i]), dtype=float) for i in range(n)],
            [np.array(values.get(f"head.b{i}", self.biases[i]), dtype=float) for i in range(n)],
            list(self.dropout),
        )


def _mlp_pass(head: MlpHead, x: np.ndarray, training: bool, rng):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != head.input_dim:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match head width {head.input_dim}")
    acts = [x]
    masks = []
    h = x
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        h = h @ w + b
        if i == last:
            break
        h = np.maximum(h, 0.0)
        p = head.dropout[i]
        if training and p > 0.0:
            if rng is None:
                raise ConfigurationError("dropout in training mode needs a random generator")
            keep = rng.random(h.shape) >= p
            mask = keep / (1.0 - p) if p < 1.0 else np.zeros(h.shape)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)
    logit = h[..., 0]
    return logit, (acts, masks)


def mlp_forward(head: MlpHead, x, training: bool = False, rng: np.random.Generator | None = None):
    """Probability of the positive class for one input or a batch."""
    logit, _ = _mlp_pass(head, x, training, rng)
    return _logistic(logit)


def _logistic(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _mlp_backward(head: MlpHead, cache, g_logit: np.ndarray):
    acts, masks = cache
    grads = {}
    g = g_logit[:, None]
    for i in reversed(range(len(head.weights))):
        grads[f"head.W{i}"] = acts[i].T @ g
        grads[f"head.b{i}"] = g.sum(axis=0)
        g = g @ head.weights[i].T
        if i > 0:
            if masks[i - 1] is not None:
                g = g * masks[i - 1]
            g = g * (acts[i] > 0)
    return grads, g


def bce_loss(prediction, label):
    """Binary cross-entropy with the prediction clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(label, dtype=float)
    p = np.clip(np.asarray(prediction, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


# ---------------------------------------------------------------------------
# Fusion front ends


@dataclass(frozen=True)
class ConcatBaseline:
    """Fusion by concatenating the audio and visual embeddings."""

    trainable: frozenset = frozenset()

    def get_params(self, groups=None) -> dict[str, np.ndarray]:
        return {}

    def with_params(self, values) -> "ConcatBaseline":
        return self


Fuser = ScfModel | ConcatBaseline


def fused_width(fuser: Fuser, dims: Sequence[int]) -> int:
    if isinstance(fuser, ScfModel):
        return fuser.n_cells
    return int(sum(dims))


def embed(fuser: Fuser, stimuli: Sequence[np.ndarray], record: bool = False):
    """Fused embeddings of a batch plus whatever the backward pass needs."""
    stimuli = [np.asarray(s, dtype=float) for s in stimuli]
    if isinstance(fuser, ScfModel):
        result = core.run_forward(fuser, stimuli, record=record)
        return result.embedding, result
    return np.concatenate(stimuli, axis=-1), None


def _stimuli(data: EmbeddingDataset, index=None):
    if index is None:
        return [data.audio.astype(float), data.visual.astype(float)]
    return [data.audio[index].astype(float), data.visual[index].astype(float)]


def grad(
    fuser: Fuser,
    head: MlpHead,
    stimuli: Sequence[np.ndarray],
    labels: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Mean batch loss and its exact gradient w.r.t. every trainable parameter.

    Returns ``(loss, grads, probabilities)``; grads are keyed like
    ``fuser.get_params()`` and ``head.get_params()``.
    """
    labels = np.asarray(labels, dtype=float)
    emb, cache = embed(fuser, stimuli, record=bool(fuser.trainable))
    logit, mlp_cache = _mlp_pass(head, emb, training, rng)
    prob = _logistic(logit)
    losses = bce_loss(prob, labels)
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss}; {int(np.sum(~np.isfinite(logit)))} of {logit.size} logits non-finite"
        )
    # derivative of the clamped BCE w.r.t. the logit
    inside = (prob > PROB_CLIP) & (prob < 1.0 - PROB_CLIP)
    g_logit = np.where(inside, prob - labels, 0.0) / len(labels)
    grads, g_emb = _mlp_backward(head, mlp_cache, g_logit)
    if isinstance(fuser, ScfModel) and fuser.trainable:
        grads.update(core.backward(fuser, stimuli, cache, g_emb))
    return loss, grads, prob


def predict(fuser: Fuser, head: MlpHead, stimuli, batch_size: int = 512) -> np.ndarray:
    n = len(stimuli[0])
    out = np.empty(n)
    for start in range(0, n, batch_size):
        part = [s[start : start + batch_size] for s in stimuli]
        emb, _ = embed(fuser, part)
        out[start : start + batch_size] = mlp_forward(head, emb)
    return out


# ---------------------------------------------------------------------------
# Optimiser


class Adam:
    """Bias-corrected Adam over a dict of named arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, config: TrainConfig) -> "Adam":
        return cls(config.lr, config.beta1, config.beta2, config.eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


def adam_update(params, grads, state: Adam | None, config: TrainConfig):
    """Functional wrapper: returns updated copies of ``params`` and the state."""
    state = Adam.from_config(config) if state is None else state
    params = {k: np.array(v, copy=True) for k, v in params.items()}
    state.step(params, grads)
    return params, state


def _project(params: dict[str, np.ndarray]) -> None:
    # keep trainable dynamics inside their valid domain
    for k in params:
        if k.startswith("tau."):
            params[k] = np.maximum(params[k], 1.0)
        elif k.startswith("sigma_"):
            params[k] = np.maximum(params[k], 1e-3)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    fuser: Fuser
    head: MlpHead
    history: list[EpochRecord]
    best_epoch: int
    optimizer: Adam

    def history_table(self) -> str:
        lines = ["epoch  train_loss  train_acc  val_loss  val_acc"]
        for r in self.history:
            lines.append(
                f"{r.epoch:5d}  {r.train_loss:10.6f}  {r.train_acc:9.4f}  {r.val_loss:8.6f}  {r.val_acc:7.4f}"
            )
        lines.append(f"best_epoch {self.best_epoch}")
        return "\n".join(lines) + "\n"


def _evaluate(fuser, head, stimuli, labels, threshold):
    prob = predict(fuser, head, stimuli)
    loss = float(np.mean(bce_loss(prob, labels)))
    acc = float(np.mean((prob >= threshold) == (labels == 1)))
    return loss, acc


def train(
    fuser: Fuser,
    head: MlpHead,
    dataset: EmbeddingDataset,
    config: TrainConfig,
    *,
    validation: EmbeddingDataset | None = None,
    callback: Callable[[EpochRecord, Fuser, MlpHead], None] | None = None,
) -> TrainResult:
    """Adam with early stopping on validation loss.

    Without an explicit ``validation`` set, ``config.val_fraction`` of
    ``dataset`` is held out for it. The returned fuser and head carry the
    parameters of the epoch with the lowest validation loss.
    """
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    if validation is None and config.val_fraction > 0:
        order = rng.permutation(len(dataset))
        n_val = max(1, int(round(config.val_fraction * len(dataset))))
        if n_val >= len(dataset):
            raise InputError("dataset too small to carve out a validation split")
        validation = dataset.subset(np.sort(order[:n_val]))
        dataset = dataset.subset(np.sort(order[n_val:]))
    if len(np.unique(dataset.labels)) < 2:
        raise InputError("training split contains a single class")
    if head.input_dim != fused_width(fuser, dataset.dims):
        raise ConfigurationError(
            f"head expects {head.input_dim} inputs, fusion produces {fused_width(fuser, dataset.dims)}"
        )

    stim = _stimuli(dataset)
    labels = dataset.labels.astype(float)
    if validation is not None:
        val_stim = _stimuli(validation)
        val_labels = validation.labels.astype(float)

    params = {**fuser.get_params(), **head.get_params()}
    opt = Adam.from_config(config)
    best = (math.inf, 0, fuser, head)
    history: list[EpochRecord] = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(dataset))
        loss_sum = 0.0
        hits = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, g, prob = grad(fuser, head, [s[idx] for s in stim], labels[idx], training=True, rng=rng)
            loss_sum += loss * len(idx)
            hits += int(np.sum((prob >= config.threshold) == (labels[idx] == 1)))
            opt.step(params, g)
            _project(params)
            fuser = fuser.with_params(params)
            head = head.with_params(params)
        if config.train_metrics == "running":
            tr_loss, tr_acc = loss_sum / len(order), hits / len(order)
        else:
            tr_loss, tr_acc = _evaluate(fuser, head, stim, labels, config.threshold)
        if validation is not None:
            va_loss, va_acc = _evaluate(fuser, head, val_stim, val_labels, config.threshold)
        else:
            va_loss, va_acc = tr_loss, tr_acc
        if not np.isfinite(tr_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        record = EpochRecord(epoch, tr_loss, tr_acc, va_loss, va_acc)
        history.append(record)
        log.debug("epoch %d train %.4f/%.3f val %.4f/%.3f", epoch, tr_loss, tr_acc, va_loss, va_acc)
        if callback is not None:
            callback(record, fuser, head)
        if va_loss < best[0]:
            best = (va_loss, epoch, fuser, head)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _, best_epoch, fuser, head = best
    return TrainResult(fuser, head, history, best_epoch, opt)


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass
class FoldReport:
    accuracies: list[float]
    held_out: dict[int, list[str]]
    scenario: str = "independent"
    label: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        # population standard deviation
        return float(np.std(self.accuracies))

    def summary(self) -> str:
        """Mean and standard deviation in percent, e.g. ``90.00 (6.32) [%]``."""
        return f"{100 * self.mean:.2f} ({100 * self.std:.2f}) [%]"

    def table(self) -> str:
        head = f"# {self.label} {self.scenario}".rstrip() + "\n"
        rows = ["fold  accuracy  held_out"]
        for i, acc in enumerate(self.accuracies):
            rows.append(f"{i:4d}  {acc:8.6f}  {','.join(self.held_out.get(i, []))}")
        rows.append(f"mean  {self.mean:.6f}")
        rows.append(f"std   {self.std:.6f}")
        rows.append(f"summary {self.summary()}")
        return head + "\n".join(rows) + "\n"


def fold_seed(seed: int, fold: int) -> int:
    """Independent per-fold seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def cross_validate(
    dataset: EmbeddingDataset,
    scenario: str,
    k: int,
    config: TrainConfig,
    make_fuser: Callable[[int], Fuser],
    *,
    label: str = "",
    callback: Callable[[int, float], None] | None = None,
) -> FoldReport:
    """k-fold evaluation; ``make_fuser(seed)`` builds a fresh front end per fold.

    The validation split for early stopping is carved from each fold's
    training part, never from its test part.
    """
    assignment = split_groups(dataset, scenario, k, config.seed)
    accs: list[float] = []
    held: dict[int, list[str]] = {}
    for fold, (tr, te) in enumerate(fold_indices(dataset, scenario, assignment)):
        if len(te) == 0 or len(tr) == 0:
            raise InputError(f"fold {fold} has an empty train or test part")
        seed = fold_seed(config.seed, fold)
        fuser = make_fuser(seed)
        head = MlpHead.create(
            fused_width(fuser, dataset.dims), config.hidden, config.dropout, seed=seed + 1
        )
        result = train(fuser, head, dataset.subset(tr), dataclasses.replace(config, seed=seed))
        test = dataset.subset(te)
        _, acc = _evaluate(result.fuser, result.head, _stimuli(test), test.labels.astype(float), config.threshold)
        accs.append(acc)
        held[fold] = sorted(set(test.group_ids))
        log.info("fold %d accuracy %.4f (best epoch %d)", fold, acc, result.best_epoch)
        if callback is not None:
            callback(fold, acc)
    return FoldReport(accs, held, scenario, label)

