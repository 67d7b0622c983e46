"""Attention LSTM caption decoder with two sentiment injection points.

Sentiment enters the network twice: a high-level embedding vector added
to the pre-activation of every LSTM gate, and a word-level embedding
vector added as an extra energy term in the word softmax. Ablation
variants switch these off individually:

* ``ATTEND``        -- no sentiment anywhere, plain soft-attention decoder;
* ``MINUS_E1E2L2``  -- both embedding tables frozen to the 3x3 identity
                       (one-hot), no sentiment loss;
* ``MINUS_E2L2``    -- gate-level embedding only, no word-level term,
                       no sentiment loss;
* ``MINUS_L2``      -- both embeddings, no sentiment loss;
* ``FULL``          -- both embeddings plus the per-step sentiment loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor

# reserved vocabulary slots
PAD, START, END, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<start>", "<end>", "<unk>")

GATES = ("i", "g", "o", "f")


class Variant(str, Enum):
    ATTEND = "attend"
    MINUS_E1E2L2 = "minus_e1e2l2"
    MINUS_E2L2 = "minus_e2l2"
    MINUS_L2 = "minus_l2"
    FULL = "full"

    @property
    def has_gate_sentiment(self) -> bool:
        """Gate-level embedding feeds the LSTM (all variants except ATTEND)."""
        return self is not Variant.ATTEND

    @property
    def has_word_sentiment(self) -> bool:
        """Word-level embedding feeds the word softmax."""
        return self in (Variant.FULL, Variant.MINUS_L2, Variant.MINUS_E1E2L2)

    @property
    def has_sentiment_loss(self) -> bool:
        return self is Variant.FULL

    @property
    def one_hot_sentiment(self) -> bool:
        return self is Variant.MINUS_E1E2L2


# table rows; NEUTRAL labels every factual-corpus caption
class Sentiment(IntEnum):
    POSITIVE = 0
    NEUTRAL = 1
    NEGATIVE = 2

    @classmethod
    def from_name(cls, name: str) -> "Sentiment":
        table = {"pos": cls.POSITIVE, "positive": cls.POSITIVE,
                 "neutral": cls.NEUTRAL,
                 "neg": cls.NEGATIVE, "negative": cls.NEGATIVE}
        key = name.strip().lower()
        if key not in table:
            raise DataError(f"unknown sentiment label: {name!r}")
        return table[key]

    @property
    def short(self) -> str:
        return {Sentiment.POSITIVE: "pos", Sentiment.NEUTRAL: "neutral",
                Sentiment.NEGATIVE: "neg"}[self]


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and switches for one decoder instance.

    Reference full-scale values: 196 regions x 512 feature dims, hidden
    2048 (1024 for the sentiment-free variant), word embeddings 512,
    sentiment embeddings 256, vocabulary 9703.
    """

    regions: int            # K, attention grid cells per image
    feature_dim: int        # D, dims per region
    hidden: int             # LSTM state width
    word_dim: int           # M
    sentiment_dim: int      # F (forced to 3 by the one-hot variant)
    vocab_size: int         # N
    variant: Variant = Variant.FULL
    dropout_rate: float = 0.5
    attention_hidden: int = 64

    def __post_init__(self):
        for name in ("regions", "feature_dim", "hidden", "word_dim",
                     "sentiment_dim", "vocab_size", "attention_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"ModelConfig.{name} must be a positive int, got {v!r}")
        if self.vocab_size <= UNK:
            raise ConfigError("vocab_size must leave room for the 4 reserved tokens")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def effective_sentiment_dim(self) -> int:
        return 3 if self.variant.one_hot_sentiment else self.sentiment_dim

    def to_dict(self) -> dict:
        return {
            "regions": self.regions, "feature_dim": self.feature_dim,
            "hidden": self.hidden, "word_dim": self.word_dim,
            "sentiment_dim": self.sentiment_dim, "vocab_size": self.vocab_size,
            "variant": self.variant.value, "dropout_rate": self.dropout_rate,
            "attention_hidden": self.attention_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**{**d, "variant": Variant(d["variant"])})
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc


@dataclass
class SpatialFeatures:
    """One image's K x D attention grid."""

    image_id: str
    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ShapeError(f"feature grid must be 2-d, got shape {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise DataError(f"non-finite feature values for image {self.image_id!r}")


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    alpha: Tensor  # last attention weights, row vector on the simplex


def parameter_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every tensor the variant owns.

    Order is fixed; initialization consumes the rng in this order, so a
    seed pins the full parameter set bit-for-bit.
    """
    k, d, h = config.regions, config.feature_dim, config.hidden
    m, n, a = config.word_dim, config.vocab_size, config.attention_hidden
    f = config.effective_sentiment_dim
    variant = config.variant

    specs: list[tuple[str, tuple[int, ...], str]] = [("word_embed", (n, m), "embed")]
    if variant.has_gate_sentiment:
        specs.append(("E1_table", (3, f), "identity" if variant.one_hot_sentiment else "embed"))
    if variant.has_word_sentiment:
        specs.append(("E2_table", (3, f), "identity" if variant.one_hot_sentiment else "embed"))
    for g in GATES:
        specs.append((f"W_{g}", (m, h), "matrix"))
        specs.append((f"H_{g}", (h, h), "matrix"))
        specs.append((f"A_{g}", (d, h), "matrix"))
        if variant.has_gate_sentiment:
            specs.append((f"B_{g}", (f, h), "matrix"))
        specs.append((f"b_{g}", (1, h), "bias"))
    specs += [("U_a", (d, a), "matrix"), ("U_h", (h, a), "matrix"),
              ("b_att", (1, a), "bias"), ("v_att", (a, 1), "matrix")]
    specs += [("W_init_h", (d, h), "matrix"), ("b_init_h", (1, h), "bias"),
              ("W_init_c", (d, h), "matrix"), ("b_init_c", (1, h), "bias")]
    specs += [("W_h", (h, n), "matrix"), ("W_a", (d, n), "matrix")]
    if variant.has_word_sentiment:
        specs.append(("W_e", (f, n), "matrix"))
    specs.append(("b", (1, n), "bias"))
    if variant.has_gate_sentiment:
        # head exists for every sentiment variant; only FULL trains it
        specs += [("W_s", (h, 3), "matrix"), ("b_s", (1, 3), "bias")]
    return specs


class Parameters:
    """Every trainable weight, as named f64 arrays outside any tape.

    The one-hot variant's embedding tables are fixed identities and are
    excluded from the trainable set (the optimizer never sees them).
    """

    def __init__(self, config: ModelConfig, values: dict[str, np.ndarray],
                 trainable: frozenset[str]):
        self.config = config
        self.values = values
        self.trainable = trainable
        expected = {name: shape for name, shape, _ in parameter_specs(config)}
        if set(values) != set(expected):
            raise ConfigError(
                f"parameter names do not match variant {config.variant.value}: "
                f"missing {sorted(set(expected) - set(values))}, "
                f"extra {sorted(set(values) - set(expected))}")
        for name, arr in values.items():
            if arr.shape != expected[name]:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != expected {expected[name]}")

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "Parameters":
        values: dict[str, np.ndarray] = {}
        trainable: set[str] = set()
        for name, shape, kind in parameter_specs(config):
            if kind == "matrix":
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                values[name] = rng.uniform(-limit, limit, size=shape)
                trainable.add(name)
            elif kind == "bias":
                values[name] = np.zeros(shape)
                trainable.add(name)
            elif kind == "embed":
                values[name] = rng.normal(scale=0.1, size=shape)
                trainable.add(name)
            elif kind == "identity":
                values[name] = np.eye(3)
            else:  # pragma: no cover
                raise ConfigError(f"unknown init kind {kind}")
        return cls(config, values, frozenset(trainable))

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.values.items()},
                          self.trainable)

    def num_trainable_scalars(self) -> int:
        return sum(self.values[name].size for name in self.trainable)

    def leaves(self, tape: T.Tape) -> dict[str, Tensor]:
        """Wrap for one forward/backward pass: trainable tensors become
        named tape leaves, fixed tensors become constants."""
        out: dict[str, Tensor] = {}
        for name, arr in self.values.items():
            out[name] = tape.leaf(arr, name=name) if name in self.trainable else Tensor(arr)
        return out

    def constants(self) -> dict[str, Tensor]:
        """Gradient-free wrapping for inference."""
        return {name: Tensor(arr) for name, arr in self.values.items()}


@dataclass
class ForwardTrace:
    """Per-step outputs of one teacher-forced pass over a caption."""

    tokens: list[int]
    sentiment: Sentiment | None
    alphas: list[Tensor] = field(default_factory=list)          # (1, K) each
    word_logits: list[Tensor] = field(default_factory=list)     # (1, N) each
    sentiment_logits: list[Tensor] | None = None                # (1, 3) each, FULL only

    @property
    def num_steps(self) -> int:
        return len(self.word_logits)


def init_state(features: Tensor, params: dict[str, Tensor], config: ModelConfig) -> DecoderState:
    """Mean-feature MLPs produce h0/c0; attention starts uniform."""
    if features.shape != (config.regions, config.feature_dim):
        raise ConfigError(
            f"feature grid shape {features.shape} != (regions, feature_dim) = "
            f"({config.regions}, {config.feature_dim})")
    mean_feat = T.reduce_mean(features, axis=0, keepdims=True)
    h0 = T.tanh(T.matmul(mean_feat, params["W_init_h"]) + params["b_init_h"])
    c0 = T.tanh(T.matmul(mean_feat, params["W_init_c"]) + params["b_init_c"])
    alpha0 = Tensor(np.full((1, config.regions), 1.0 / config.regions))
    return DecoderState(h=h0, c=c0, alpha=alpha0)


def attend(features: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Additive soft attention: returns (context (1, D), weights (1, K))."""
    scores = T.tanh(T.matmul(features, params["U_a"])
                    + T.matmul(h_prev, params["U_h"])
                    + params["b_att"])
    energy = T.matmul(scores, params["v_att"])          # (K, 1)
    alpha = T.transpose(T.softmax(energy, axis=0))       # (1, K)
    a_hat = T.matmul(alpha, features)                    # (1, D)
    return a_hat, alpha


def lstm_step(state: DecoderState, w_prev: Tensor, a_hat: Tensor,
              e1: Tensor | None, params: dict[str, Tensor],
              config: ModelConfig) -> DecoderState:
    """One decoder step; e1 is the gate-level sentiment vector."""
    if config.variant.has_gate_sentiment and e1 is None:
        raise ConfigError(f"variant {config.variant.value} needs a gate-level sentiment vector")
    if not config.variant.has_gate_sentiment and e1 is not None:
        raise ConfigError("sentiment-free variant got a gate-level sentiment vector")

    def gate(g: str) -> Tensor:
        pre = (T.matmul(w_prev, params[f"W_{g}"])
               + T.matmul(state.h, params[f"H_{g}"])
               + T.matmul(a_hat, params[f"A_{g}"]))
        if e1 is not None:
            pre = pre + T.matmul(e1, params[f"B_{g}"])
        return pre + params[f"b_{g}"]

    i = T.sigmoid(gate("i"))
    g = T.tanh(gate("g"))
    o = T.sigmoid(gate("o"))
    f = T.sigmoid(gate("f"))
    c = T.mul(f, state.c) + T.mul(i, g)
    h = T.mul(o, T.tanh(c))
    return DecoderState(h=h, c=c, alpha=state.alpha)


def word_logits(state: DecoderState, a_hat: Tensor, e2: Tensor | None,
                params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Unnormalized word scores; softmax of these is the word distribution."""
    if config.variant.has_word_sentiment and e2 is None:
        raise ConfigError(f"variant {config.variant.value} needs a word-level sentiment vector")
    if not config.variant.has_word_sentiment and e2 is not None:
        raise ConfigError(f"variant {config.variant.value} has no word-level sentiment term")
    logits = T.matmul(state.h, params["W_h"]) + T.matmul(a_hat, params["W_a"])
    if e2 is not None:
        logits = logits + T.matmul(e2, params["W_e"])
    return logits + params["b"]


def sentiment_logits(state: DecoderState, params: dict[str, Tensor],
                     config: ModelConfig) -> Tensor:
    """Affine head over the hidden state; only the FULL variant uses it."""
    if not config.variant.has_sentiment_loss:
        raise ConfigError(f"sentiment logits are only defined for the full variant, "
                          f"not {config.variant.value}")
    return T.matmul(state.h, params["W_s"]) + params["b_s"]


def validate_caption(tokens: list[int], vocab_size: int) -> None:
    if len(tokens) < 2:
        raise DataError(f"caption too short: {tokens}")
    if tokens[0] != START or tokens[-1] != END:
        raise DataError("caption must begin with <start> and end with <end>")
    for t in tokens:
        if not (0 <= t < vocab_size):
            raise DataError(f"unknown token id {t} (vocab size {vocab_size})")


def forward_teacher_forced(features: Tensor, tokens: list[int],
                           sentiment: Sentiment | None,
                           params: dict[str, Tensor], config: ModelConfig,
                           rng: np.random.Generator | None = None,
                           training: bool = False) -> ForwardTrace:
    """Run the decoder over a gold caption, predicting each next token.

    A caption of length T yields T-1 prediction steps (<start> is never
    predicted). The sentiment vectors are looked up once per caption;
    dropout, when training, draws a fresh mask at every step.
    """
    variant = config.variant
    validate_caption(tokens, config.vocab_size)
    if variant.has_gate_sentiment and sentiment is None:
        raise ConfigError(f"variant {variant.value} needs a sentiment category")

    e1_base = (T.embedding_lookup(params["E1_table"], int(sentiment))
               if variant.has_gate_sentiment else None)
    e2_base = (T.embedding_lookup(params["E2_table"], int(sentiment))
               if variant.has_word_sentiment else None)

    state = init_state(features, params, config)
    trace = ForwardTrace(tokens=list(tokens), sentiment=sentiment,
                         sentiment_logits=[] if variant.has_sentiment_loss else None)
    rate = config.dropout_rate
    for t in range(1, len(tokens)):
        a_hat, alpha = attend(features, state.h, params)
        w_prev = T.embedding_lookup(params["word_embed"], tokens[t - 1])
        e1 = T.dropout(e1_base, rate, training, rng) if e1_base is not None else None
        state = DecoderState(h=state.h, c=state.c, alpha=alpha)
        state = lstm_step(state, w_prev, a_hat, e1, params, config)
        e2 = T.dropout(e2_base, rate, training, rng) if e2_base is not None else None
        trace.alphas.append(alpha)
        trace.word_logits.append(word_logits(state, a_hat, e2, params, config))
        if trace.sentiment_logits is not None:
            trace.sentiment_logits.append(sentiment_logits(state, params, config))
    return trace
