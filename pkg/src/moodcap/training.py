"""Two-part training objective, Adam, the epoch loop and model selection.

The caption loss sums a per-step cross entropy over the word
distribution with a coverage regularizer that pushes the total
attention mass on each region toward 1. The full variant adds a
time-averaged cross entropy forcing every hidden state to encode the
requested sentiment class. The combination weights are configurable
(both default 1) and echoed in logs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import CaptionRecord, FeatureStore, Vocabulary, make_batches
from .errors import ConfigError, NumericsError
from .model import (
    ForwardTrace,
    ModelConfig,
    Parameters,
    Sentiment,
    forward_teacher_forced,
)
from .pipeline import (
    SELECTION_METRICS,
    generate_captions,
    generation_pairs,
    selection_score,
)
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 180          # full-scale reference; 100 for the plain variant
    epochs: int = 10
    lambda_att: float = 1.0        # weight of the attention coverage term
    lambda_l2: float = 1.0         # weight of the sentiment loss
    dropout_rate: float | None = None   # None = use the model config's rate
    seed: int = 0
    selection_metric: str = "cider"
    grad_clip: float = 5.0         # global-norm clip, <= 0 disables
    max_len: int = 20              # decode length for validation generation

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.lambda_att < 0 or self.lambda_l2 < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"selection_metric must be one of {SELECTION_METRICS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LossBreakdown:
    l1_xent: float
    l1_reg: float
    l2: float
    total: float

    @classmethod
    def make(cls, l1_xent: float, l1_reg: float, l2: float,
             lambda_att: float, lambda_l2: float) -> "LossBreakdown":
        # total is this exact expression by construction
        return cls(l1_xent, l1_reg, l2, l1_xent + lambda_att * l1_reg + lambda_l2 * l2)


def loss_l1(trace: ForwardTrace) -> tuple[Tensor, Tensor]:
    """(cross entropy summed over steps, attention coverage penalty).

    The penalty is sum_k (1 - sum_t alpha_tk)^2 with t over this
    caption's prediction steps.
    """
    if trace.num_steps == 0:
        raise ConfigError("trace has no prediction steps")
    xent: Tensor | None = None
    for t, logits in enumerate(trace.word_logits):
        log_probs = T.log_softmax(logits, axis=-1)
        term = T.neg(T.pick(log_probs, (0, trace.tokens[t + 1])))
        xent = term if xent is None else xent + term
    stacked = T.concat(trace.alphas, axis=0)                       # (steps, K)
    coverage = T.reduce_sum(stacked, axis=0, keepdims=True)        # (1, K)
    gap = T.sub(1.0, coverage)
    reg = T.reduce_sum(T.mul(gap, gap))
    return xent, reg


def loss_l2(trace: ForwardTrace) -> Tensor:
    """Sentiment cross entropy averaged over the trace's steps."""
    if trace.sentiment_logits is None:
        raise ConfigError("trace carries no sentiment logits; only the full "
                          "variant trains the sentiment loss")
    if trace.sentiment is None:
        raise ConfigError("trace has no sentiment label")
    total: Tensor | None = None
    for logits in trace.sentiment_logits:
        term = T.neg(T.pick(T.log_softmax(logits, axis=-1), (0, int(trace.sentiment))))
        total = term if total is None else total + term
    return T.mul(total, 1.0 / len(trace.sentiment_logits))


Example = tuple[np.ndarray, list[int], Sentiment | None]


def build_batch_loss(params: Parameters, examples: list[Example],
                     config: ModelConfig, tconfig: TrainConfig,
                     rng: np.random.Generator | None = None,
                     training: bool = False) -> tuple[Tensor, LossBreakdown]:
    """Batch-mean combined loss as a differentiable scalar on a fresh tape."""
    if not examples:
        raise ConfigError("empty batch")
    effective = config
    if tconfig.dropout_rate is not None and tconfig.dropout_rate != config.dropout_rate:
        effective = dataclasses.replace(config, dropout_rate=tconfig.dropout_rate)
    tape = T.Tape()
    leaves = params.leaves(tape)
    total: Tensor | None = None
    xent_sum = reg_sum = l2_sum = 0.0
    for grid, tokens, sentiment in examples:
        sent = sentiment if effective.variant.has_gate_sentiment else None
        trace = forward_teacher_forced(Tensor(grid), tokens, sent, leaves,
                                       effective, rng=rng, training=training)
        xent, reg = loss_l1(trace)
        combined = xent + T.mul(reg, tconfig.lambda_att)
        l2_val = 0.0
        if effective.variant.has_sentiment_loss:
            l2 = loss_l2(trace)
            combined = combined + T.mul(l2, tconfig.lambda_l2)
            l2_val = l2.item()
        xent_sum += xent.item()
        reg_sum += reg.item()
        l2_sum += l2_val
        total = combined if total is None else total + combined
    n = len(examples)
    breakdown = LossBreakdown.make(xent_sum / n, reg_sum / n, l2_sum / n,
                                   tconfig.lambda_att, tconfig.lambda_l2)
    return T.mul(total, 1.0 / n), breakdown


def combined_loss(params: Parameters, examples: list[Example], config: ModelConfig,
                  tconfig: TrainConfig, rng: np.random.Generator | None = None,
                  training: bool = False) -> LossBreakdown:
    """Loss values only (throwaway tape)."""
    _, breakdown = build_batch_loss(params, examples, config, tconfig, rng, training)
    return breakdown


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Global-norm clipping in place; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class AdamState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: Parameters, grads: dict[str, np.ndarray], state: AdamState,
              tconfig: TrainConfig) -> None:
    """Bias-corrected Adam over the trainable set; fixed tensors untouched."""
    state.t += 1
    b1, b2 = tconfig.beta1, tconfig.beta2
    for name in sorted(params.trainable):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m += (1 - b1) * (g - m)
        v += (1 - b2) * (g * g - v)
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        params.values[name] -= tconfig.learning_rate * m_hat / (np.sqrt(v_hat) + tconfig.adam_eps)


@dataclass
class EpochLog:
    epoch: int
    l1_xent: float
    l1_reg: float
    l2: float
    total: float
    val_metric: float | None

    def format(self, metric_name: str) -> str:
        line = (f"epoch={self.epoch} l1_xent={self.l1_xent:.6f} "
                f"l1_reg={self.l1_reg:.6f} l2={self.l2:.6f} total={self.total:.6f}")
        if self.val_metric is not None:
            line += f" val_{metric_name}={self.val_metric:.6f}"
        return line


@dataclass
class TrainResult:
    params: Parameters             # final-epoch parameters
    best_params: Parameters        # selection-metric winner (final when no val set)
    logs: list[EpochLog]
    best_epoch: int
    checkpoint_paths: dict[str, str]


def _examples_for(batch_records: list[CaptionRecord],
                  features: FeatureStore) -> list[Example]:
    return [(features.get(r.image_id).grid, r.tokens, r.sentiment) for r in batch_records]


def _validation_metric(params: Parameters, config: ModelConfig, vocab: Vocabulary,
                       features: FeatureStore, val_records: list[CaptionRecord],
                       tconfig: TrainConfig) -> float:
    pairs = generation_pairs(val_records, config.variant.has_gate_sentiment)
    lines = generate_captions(params, config, vocab, features, pairs,
                              max_len=tconfig.max_len)
    return selection_score(tconfig.selection_metric, lines, val_records)


def train(records: list[CaptionRecord], features: FeatureStore, vocab: Vocabulary,
          config: ModelConfig, tconfig: TrainConfig,
          val_records: list[CaptionRecord] | None = None,
          checkpoint_dir: str | Path | None = None,
          log_fn=None) -> TrainResult:
    """Teacher-forced epochs with seeded shuffling and per-epoch validation.

    Keeps two checkpoints when a directory is given: ``last.ckpt``
    (every epoch) and ``best.ckpt`` (highest validation metric, earliest
    epoch on ties). Identical seeds reproduce identical loss logs.
    """
    if not records:
        raise ConfigError("training corpus is empty")
    if config.variant.has_gate_sentiment:
        unlabeled = [r.image_id for r in records if r.sentiment is None]
        if unlabeled:
            raise ConfigError(f"{len(unlabeled)} records lack sentiment labels; "
                              f"merge with neutral labeling first")
    rng = np.random.default_rng(tconfig.seed)
    params = Parameters.initialize(config, rng)
    state = AdamState()
    logs: list[EpochLog] = []
    best_epoch = 0
    best_metric = -math.inf
    best_params = params.copy()
    paths: dict[str, str] = {}
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, tconfig.epochs + 1):
        xent_sum = reg_sum = l2_sum = 0.0
        n_examples = 0
        for batch in make_batches(records, tconfig.batch_size, rng):
            examples = _examples_for(batch.records(), features)
            loss, breakdown = build_batch_loss(params, examples, config, tconfig,
                                               rng=rng, training=True)
            grads = loss.tape.backward(loss)
            clip_gradients(grads, tconfig.grad_clip)
            adam_step(params, grads, state, tconfig)
            b = len(examples)
            xent_sum += breakdown.l1_xent * b
            reg_sum += breakdown.l1_reg * b
            l2_sum += breakdown.l2 * b
            n_examples += b

        val_metric = None
        if val_records:
            val_metric = _validation_metric(params, config, vocab, features,
                                            val_records, tconfig)
            if val_metric > best_metric:
                best_metric = val_metric
                best_epoch = epoch
                best_params = params.copy()
                if ckpt_dir is not None:
                    paths["best"] = str(ckpt_dir / "best.ckpt")
                    save_checkpoint(paths["best"], params, vocab)
        log = EpochLog(
            epoch=epoch,
            l1_xent=xent_sum / n_examples,
            l1_reg=reg_sum / n_examples,
            l2=l2_sum / n_examples,
            total=LossBreakdown.make(xent_sum / n_examples, reg_sum / n_examples,
                                     l2_sum / n_examples, tconfig.lambda_att,
                                     tconfig.lambda_l2).total,
            val_metric=val_metric,
        )
        logs.append(log)
        if log_fn is not None:
            log_fn(log.format(tconfig.selection_metric))
        if ckpt_dir is not None:
            paths["last"] = str(ckpt_dir / "last.ckpt")
            save_checkpoint(paths["last"], params, vocab)

    if not val_records:
        best_params = params.copy()
        best_epoch = len(logs)
        if ckpt_dir is not None and logs:
            paths["best"] = str(ckpt_dir / "best.ckpt")
            save_checkpoint(paths["best"], params, vocab)
    return TrainResult(params=params, best_params=best_params, logs=logs,
                       best_epoch=best_epoch, checkpoint_paths=paths)


def argmax_earliest(values: list[float]) -> int:
    """Index of the maximum, earliest index on ties."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def select_best(val_records: list[CaptionRecord], features: FeatureStore,
                checkpoint_paths: list[str], metric: str = "cider",
                max_len: int = 20) -> tuple[str, list[float]]:
    """Evaluate checkpoints on the validation set; return the winner's path.

    Ties resolve to the earliest checkpoint in the given order.
    """
    if not checkpoint_paths:
        raise ConfigError("select_best needs at least one checkpoint")
    scores = []
    for path in checkpoint_paths:
        params, config, vocab = load_checkpoint(path)
        pairs = generation_pairs(val_records, config.variant.has_gate_sentiment)
        lines = generate_captions(params, config, vocab, features, pairs, max_len=max_len)
        scores.append(selection_score(metric, lines, val_records))
    return checkpoint_paths[argmax_earliest(scores)], scores
