"""Sentiment-switchable caption generation: greedy and beam search.

Decoding never emits <pad> or <start> (their logits are masked out) and
optionally suppresses <unk>. Step probabilities are the softmax over the
remaining tokens, so reported log-probs are comparable across decoders
and a perturbed token can never outscore the greedy choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Vocabulary
from .errors import ConfigError
from .model import (
    END,
    PAD,
    START,
    UNK,
    DecoderState,
    ModelConfig,
    Parameters,
    Sentiment,
    SpatialFeatures,
    attend,
    init_state,
    lstm_step,
    sentiment_logits,
    word_logits,
)
from .tensor import Tensor


@dataclass
class DecodeRequest:
    features: SpatialFeatures
    sentiment: Sentiment | None
    max_len: int = 20
    beam_width: int = 3
    length_penalty: float = 0.0
    suppress_unk: bool = False

    def __post_init__(self):
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if self.beam_width < 1:
            raise ConfigError(f"beam_width must be >= 1, got {self.beam_width}")


@dataclass
class DecodedCaption:
    tokens: list[int]                 # emitted tokens, <end> included when reached
    words: list[str]                  # <start>/<end> excluded
    log_prob: float                   # sum of emitted tokens' log-probabilities
    attention: list[np.ndarray]       # one (K,) simplex vector per emitted token

    def normalized_score(self, length_penalty: float) -> float:
        return self.log_prob / max(1, len(self.tokens)) ** length_penalty


class Stepper:
    """Gradient-free single-step interface over fixed parameters."""

    def __init__(self, params: Parameters, config: ModelConfig, features: SpatialFeatures,
                 sentiment: Sentiment | None, suppress_unk: bool = False):
        if config.variant.has_gate_sentiment and sentiment is None:
            raise ConfigError(f"variant {config.variant.value} decodes with a "
                              f"sentiment category")
        self.config = config
        self.tensors = params.constants()
        self.features = Tensor(features.grid)
        if self.features.shape != (config.regions, config.feature_dim):
            raise ConfigError(
                f"feature grid {self.features.shape} does not match model "
                f"({config.regions}, {config.feature_dim})")
        self.e1 = (T.embedding_lookup(self.tensors["E1_table"], int(sentiment))
                   if config.variant.has_gate_sentiment else None)
        self.e2 = (T.embedding_lookup(self.tensors["E2_table"], int(sentiment))
                   if config.variant.has_word_sentiment else None)
        self.banned = [PAD, START] + ([UNK] if suppress_unk else [])

    def start(self) -> DecoderState:
        return init_state(self.features, self.tensors, self.config)

    def step(self, state: DecoderState, prev_token: int) -> tuple[DecoderState, np.ndarray, np.ndarray]:
        """Advance one token; returns (state, masked log-probs (N,), alpha (K,))."""
        a_hat, alpha = attend(self.features, state.h, self.tensors)
        w_prev = T.embedding_lookup(self.tensors["word_embed"], prev_token)
        new_state = lstm_step(DecoderState(state.h, state.c, alpha),
                              w_prev, a_hat, self.e1, self.tensors, self.config)
        logits = word_logits(new_state, a_hat, self.e2, self.tensors, self.config)
        scores = logits.data.ravel().copy()
        scores[self.banned] = -np.inf
        shifted = scores - scores.max()
        log_probs = shifted - math.log(np.exp(shifted).sum())
        return new_state, log_probs, alpha.data.ravel().copy()

    def sentiment_probs(self, state: DecoderState) -> np.ndarray:
        return T.softmax(sentiment_logits(state, self.tensors, self.config)).data.ravel()


def greedy_decode(request: DecodeRequest, params: Parameters, config: ModelConfig,
                  vocab: Vocabulary) -> DecodedCaption:
    """Argmax decoding; ties break toward the lowest token id."""
    stepper = Stepper(params, config, request.features, request.sentiment,
                      request.suppress_unk)
    state = stepper.start()
    prev = START
    tokens: list[int] = []
    attention: list[np.ndarray] = []
    log_prob = 0.0
    for _ in range(request.max_len):
        state, log_probs, alpha = stepper.step(state, prev)
        tok = int(np.argmax(log_probs))
        tokens.append(tok)
        attention.append(alpha)
        log_prob += float(log_probs[tok])
        if tok == END:
            break
        prev = tok
    return DecodedCaption(tokens=tokens, words=vocab.decode(tokens),
                          log_prob=log_prob, attention=attention)


@dataclass
class _Hypothesis:
    tokens: list[int]
    log_prob: float
    state: DecoderState
    attention: list[np.ndarray] = field(default_factory=list)


def beam_decode(request: DecodeRequest, params: Parameters, config: ModelConfig,
                vocab: Vocabulary) -> list[DecodedCaption]:
    """Length-normalized beam search; completed hypotheses retire at <end>.

    Returns up to beam_width captions sorted by normalized score,
    descending; width 1 is token-identical to greedy decoding.
    """
    stepper = Stepper(params, config, request.features, request.sentiment,
                      request.suppress_unk)
    width = request.beam_width
    live = [_Hypothesis(tokens=[], log_prob=0.0, state=stepper.start())]
    completed: list[_Hypothesis] = []
    for _ in range(request.max_len):
        if not live:
            break
        candidates: list[_Hypothesis] = []
        for hyp in live:
            prev = hyp.tokens[-1] if hyp.tokens else START
            state, log_probs, alpha = stepper.step(hyp.state, prev)
            top = np.argsort(-log_probs, kind="stable")[:width]
            for tok in top:
                if not np.isfinite(log_probs[tok]):
                    continue
                candidates.append(_Hypothesis(
                    tokens=hyp.tokens + [int(tok)],
                    log_prob=hyp.log_prob + float(log_probs[tok]),
                    state=state,
                    attention=hyp.attention + [alpha]))
        candidates.sort(key=lambda h: (-h.log_prob, h.tokens))
        live = []
        for hyp in candidates[:width]:
            if hyp.tokens[-1] == END or len(hyp.tokens) >= request.max_len:
                completed.append(hyp)
            else:
                live.append(hyp)
    completed.extend(live)

    results = [DecodedCaption(tokens=h.tokens, words=vocab.decode(h.tokens),
                              log_prob=h.log_prob, attention=h.attention)
               for h in completed]
    results.sort(key=lambda c: (-c.normalized_score(request.length_penalty), c.tokens))
    return results[:width]


def generate_contrastive(features: SpatialFeatures, params: Parameters,
                         config: ModelConfig, vocab: Vocabulary,
                         max_len: int = 20, beam_width: int = 1,
                         length_penalty: float = 0.0,
                         suppress_unk: bool = False) -> dict[Sentiment, DecodedCaption]:
    """Decode the same image once per sentiment category."""
    if not config.variant.has_gate_sentiment:
        raise ConfigError("contrastive generation needs a sentiment-aware variant")
    out: dict[Sentiment, DecodedCaption] = {}
    for sentiment in Sentiment:
        request = DecodeRequest(features=features, sentiment=sentiment,
                                max_len=max_len, beam_width=beam_width,
                                length_penalty=length_penalty,
                                suppress_unk=suppress_unk)
        if beam_width == 1:
            out[sentiment] = greedy_decode(request, params, config, vocab)
        else:
            out[sentiment] = beam_decode(request, params, config, vocab)[0]
    return out


def score_sequence(tokens: list[int], params: Parameters, config: ModelConfig,
                   features: SpatialFeatures, sentiment: Sentiment | None,
                   suppress_unk: bool = False) -> float:
    """Log-probability a decoder would assign to an emitted token sequence.

    Uses the same masked per-step distribution as the decoders, so
    scores are directly comparable with DecodedCaption.log_prob.
    """
    stepper = Stepper(params, config, features, sentiment, suppress_unk)
    state = stepper.start()
    prev = START
    total = 0.0
    for tok in tokens:
        state, log_probs, _ = stepper.step(state, prev)
        total += float(log_probs[tok])
        prev = tok
    return total
