"""Glue between decoding, metrics and corpora: batch generation and
reference-matched evaluation, shared by training validation, the CLI
and the service layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CaptionRecord, FeatureStore, Vocabulary, normalize
from .decoding import DecodeRequest, beam_decode, greedy_decode
from .errors import ConfigError, DataError
from .metrics import AnpLexicon, MetricReport, compute_report
from .model import ModelConfig, Parameters, Sentiment

SELECTION_METRICS = ("cider", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l")


@dataclass
class GeneratedLine:
    """One decoded caption, labeled with the sentiment that was requested.

    For the sentiment-free variant the decode ignores the label but the
    line keeps it so evaluation can pair candidates with the matching
    reference set.
    """

    image_id: str
    sentiment: Sentiment | None
    words: list[str]
    log_prob: float
    attention: list[np.ndarray]

    @property
    def text(self) -> str:
        return " ".join(self.words)


def generation_pairs(records: list[CaptionRecord],
                     sentiment_aware: bool) -> list[tuple[str, Sentiment | None]]:
    """Unique (image, sentiment) pairs in first-seen order; collapses to
    unique images for the sentiment-free variant."""
    seen: dict[tuple[str, Sentiment | None], None] = {}
    for rec in records:
        key = (rec.image_id, rec.sentiment if sentiment_aware else None)
        seen.setdefault(key, None)
    return list(seen)


def generate_captions(params: Parameters, config: ModelConfig, vocab: Vocabulary,
                      features: FeatureStore,
                      pairs: list[tuple[str, Sentiment | None]],
                      max_len: int = 20, beam_width: int = 1,
                      length_penalty: float = 0.0,
                      suppress_unk: bool = False) -> list[GeneratedLine]:
    lines = []
    for image_id, sentiment in pairs:
        decode_sentiment = sentiment if config.variant.has_gate_sentiment else None
        if config.variant.has_gate_sentiment and sentiment is None:
            raise ConfigError(f"variant {config.variant.value} needs a sentiment "
                              f"for image {image_id!r}")
        request = DecodeRequest(features.get(image_id), decode_sentiment,
                                max_len=max_len, beam_width=beam_width,
                                length_penalty=length_penalty,
                                suppress_unk=suppress_unk)
        if beam_width == 1:
            cap = greedy_decode(request, params, config, vocab)
        else:
            cap = beam_decode(request, params, config, vocab)[0]
        lines.append(GeneratedLine(image_id, sentiment, cap.words, cap.log_prob,
                                   cap.attention))
    return lines


def references_by_pair(records: list[CaptionRecord],
                       by_sentiment: bool) -> dict[tuple[str, Sentiment | None], list[list[str]]]:
    """Reference token lists grouped by (image, sentiment) or by image."""
    refs: dict[tuple[str, Sentiment | None], list[list[str]]] = {}
    for rec in records:
        key = (rec.image_id, rec.sentiment if by_sentiment else None)
        refs.setdefault(key, []).append(normalize(rec.raw_text))
    return refs


def match_references(lines: list[GeneratedLine],
                     reference_records: list[CaptionRecord]) -> list[list[list[str]]]:
    """References for each generated line; missing ids are a data error."""
    by_sentiment = any(line.sentiment is not None for line in lines)
    refs = references_by_pair(reference_records, by_sentiment)
    image_refs = references_by_pair(reference_records, by_sentiment=False)
    matched: list[list[list[str]]] = []
    missing: list[str] = []
    for line in lines:
        key = (line.image_id, line.sentiment)
        got = refs.get(key)
        if got is None and line.sentiment is not None:
            # fall back to the image's full reference pool (e.g. neutral requests
            # against a pos/neg-only reference file)
            got = image_refs.get((line.image_id, None))
        if got is None:
            missing.append(line.image_id)
        else:
            matched.append(got)
    if missing:
        raise DataError(f"no references for image ids: {sorted(set(missing))}")
    return matched


def evaluate_lines(lines: list[GeneratedLine], reference_records: list[CaptionRecord],
                   lexicon: AnpLexicon, polarity: str | None = None,
                   per_image_anps: bool = True) -> MetricReport:
    if not lines:
        raise DataError("nothing to evaluate: no generated captions")
    refs = match_references(lines, reference_records)
    cands = [line.words for line in lines]
    return compute_report(cands, refs, lexicon, polarity=polarity,
                          per_image_anps=per_image_anps)


def selection_score(metric: str, lines: list[GeneratedLine],
                    reference_records: list[CaptionRecord]) -> float:
    """Scalar model-selection score over a validation set."""
    if metric not in SELECTION_METRICS:
        raise ConfigError(f"selection metric must be one of {SELECTION_METRICS}, "
                          f"got {metric!r}")
    from . import metrics as M

    refs = match_references(lines, reference_records)
    cands = [line.words for line in lines]
    if metric == "cider":
        return M.cider(cands, refs)
    if metric == "rouge_l":
        return M.rouge_l(cands, refs)
    order = int(metric[-1])
    return M.bleu_n(cands, refs)[order - 1]
