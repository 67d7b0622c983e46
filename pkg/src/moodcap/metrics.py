"""Caption evaluation: BLEU, ROUGE-L, CIDEr, adjective entropy, noun-F1, ANPs.

All metrics consume pre-tokenized captions (see data.normalize) as
``candidates: list[list[str]]`` paired index-wise with
``references: list[list[list[str]]]``. Adjectives and nouns are
identified by lexicon lookup rather than POS tagging, which keeps the
battery dependency-free and deterministic.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

Tokens = list[str]

POLARITIES = ("pos", "neg")


@dataclass
class AnpLexicon:
    """Sentiment-bearing adjectives, nouns, adjective-noun pairs, synonyms.

    The synonym relation is closed under symmetry on construction; pair
    entries must reference known adjectives and nouns.
    """

    adjectives: dict[str, str] = field(default_factory=dict)   # word -> pos|neg
    nouns: set[str] = field(default_factory=set)
    anps: dict[tuple[str, str], str] = field(default_factory=dict)
    synonyms: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        for word, pol in self.adjectives.items():
            if pol not in POLARITIES:
                raise DataError(f"adjective {word!r} has invalid polarity {pol!r}")
        for (adj, noun), pol in self.anps.items():
            if adj not in self.adjectives:
                raise DataError(f"ANP ({adj!r}, {noun!r}) uses unknown adjective")
            if noun not in self.nouns:
                raise DataError(f"ANP ({adj!r}, {noun!r}) uses unknown noun")
            if pol not in POLARITIES:
                raise DataError(f"ANP ({adj!r}, {noun!r}) has invalid polarity {pol!r}")
        closed: dict[str, set[str]] = {}
        for a, partners in self.synonyms.items():
            for b in partners:
                closed.setdefault(a, set()).add(b)
                closed.setdefault(b, set()).add(a)
        self.synonyms = closed

    def nouns_match(self, a: str, b: str) -> bool:
        return a == b or b in self.synonyms.get(a, ())


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates: list[Tokens], references: list[list[Tokens]]) -> None:
    if not candidates:
        raise DataError("empty candidate set")
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates vs {len(references)} reference groups")
    for i, refs in enumerate(references):
        if not refs:
            raise DataError(f"candidate {i} has no references")


def bleu_n(candidates: list[Tokens], references: list[list[Tokens]],
           max_n: int = 4) -> list[float]:
    """Corpus-level BLEU-1..max_n with clipped precision and brevity penalty.

    The effective reference length per candidate is the closest-length
    reference (ties toward the shorter one). A zero precision at any
    order zeroes that BLEU order and above; no smoothing.
    """
    _check_pairs(candidates, references)
    total = [0] * max_n
    correct = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = ngram_counts(cand, n)
            max_ref: Counter = Counter()
            for r in refs:
                for g, c in ngram_counts(r, n).items():
                    if c > max_ref[g]:
                        max_ref[g] = c
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[n - 1] += max(0, len(cand) - n + 1)
    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    precisions = [correct[i] / total[i] if total[i] > 0 else 0.0 for i in range(max_n)]
    scores = []
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
        else:
            geo = math.exp(sum(math.log(p) for p in precisions[:k]) / k)
            scores.append(bp * geo)
    return scores


def _lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: list[Tokens], references: list[list[Tokens]],
            beta: float = 1.2) -> float:
    """LCS F-measure, per-candidate max over references, mean over corpus."""
    _check_pairs(candidates, references)
    scores = []
    for cand, refs in zip(candidates, references):
        best = 0.0
        for ref in refs:
            lcs = _lcs_length(cand, ref)
            if lcs == 0 or not cand or not ref:
                continue
            p = lcs / len(cand)
            r = lcs / len(ref)
            best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
        scores.append(best)
    return sum(scores) / len(scores)


def cider(candidates: list[Tokens], references: list[list[Tokens]],
          max_n: int = 4, sigma: float = 6.0) -> float:
    """Consensus tf-idf n-gram similarity with count clipping and a
    gaussian length penalty; stored raw (formatted x100 for tables).

    Document frequency counts, per n-gram, the number of images whose
    reference set contains it; a single-image corpus therefore scores 0.
    """
    _check_pairs(candidates, references)
    df: Counter = Counter()
    for refs in references:
        seen: set = set()
        for ref in refs:
            for n in range(1, max_n + 1):
                seen.update(ngram_counts(ref, n))
        df.update(seen)
    log_images = math.log(len(candidates))

    def tfidf(tokens: Tokens) -> tuple[list[dict], list[float]]:
        vecs: list[dict] = [{} for _ in range(max_n)]
        norms = [0.0] * max_n
        for n in range(1, max_n + 1):
            for g, c in ngram_counts(tokens, n).items():
                w = c * (log_images - math.log(max(1.0, df[g])))
                vecs[n - 1][g] = w
                norms[n - 1] += w * w
        return vecs, [math.sqrt(v) for v in norms]

    total = 0.0
    for cand, refs in zip(candidates, references):
        cvecs, cnorms = tfidf(cand)
        image_score = 0.0
        for ref in refs:
            rvecs, rnorms = tfidf(ref)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * sigma ** 2))
            for n in range(max_n):
                num = sum(min(w, rvecs[n].get(g, 0.0)) * rvecs[n].get(g, 0.0)
                          for g, w in cvecs[n].items())
                if cnorms[n] > 0.0 and rnorms[n] > 0.0:
                    image_score += penalty * num / (cnorms[n] * rnorms[n])
        total += image_score / (max_n * len(refs))
    return total / len(candidates)


def entropy_adjectives(candidates: list[Tokens], lexicon: AnpLexicon) -> float:
    """Base-2 entropy of lexicon-adjective token occurrences across captions.

    Each occurrence counts (not caption-level presence). Zero adjectives
    found returns 0 with a warning.
    """
    counts = Counter(t for cand in candidates for t in cand if t in lexicon.adjectives)
    total = sum(counts.values())
    if total == 0:
        warnings.warn("no lexicon adjectives found in candidates; entropy is 0")
        return 0.0
    return -sum((c / total) * math.log2(c / total) for c in counts.values()) + 0.0


def _max_matching(left: list[str], right: list[str], lexicon: AnpLexicon) -> int:
    """Maximum bipartite matching size under identity-or-synonym edges."""
    match_of_right: dict[int, int] = {}

    def try_assign(i: int, seen: set[int]) -> bool:
        for j, r in enumerate(right):
            if j in seen or not lexicon.nouns_match(left[i], r):
                continue
            seen.add(j)
            if j not in match_of_right or try_assign(match_of_right[j], seen):
                match_of_right[j] = i
                return True
        return False

    return sum(try_assign(i, set()) for i in range(len(left)))


def spice_n(candidates: list[Tokens], references: list[list[Tokens]],
            lexicon: AnpLexicon) -> float:
    """Noun-set F1 per image (synonyms count as matches), averaged."""
    _check_pairs(candidates, references)
    scores = []
    for cand, refs in zip(candidates, references):
        cand_nouns = sorted({t for t in cand if t in lexicon.nouns})
        ref_nouns = sorted({t for ref in refs for t in ref if t in lexicon.nouns})
        matched = _max_matching(cand_nouns, ref_nouns, lexicon)
        p = matched / len(cand_nouns) if cand_nouns else 0.0
        r = matched / len(ref_nouns) if ref_nouns else 0.0
        scores.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return sum(scores) / len(scores)


def _anp_bigrams(tokens: Tokens, lexicon: AnpLexicon, polarity: str):
    for a, b in zip(tokens, tokens[1:]):
        if lexicon.anps.get((a, b)) == polarity:
            yield (a, b)


def count_anps(candidates: list[Tokens], references: list[list[Tokens]],
               lexicon: AnpLexicon, polarity: str,
               per_image: bool = True) -> tuple[int, int]:
    """Occurrences of polarity-matched adjective-noun bigrams.

    Returns (generated, matched): total occurrences in the candidates,
    and those whose pair also appears adjacently in a reference -- for
    the same image by default, anywhere in the reference corpus when
    ``per_image`` is False.
    """
    if polarity not in POLARITIES:
        raise DataError(f"polarity must be one of {POLARITIES}, got {polarity!r}")
    _check_pairs(candidates, references)
    corpus_pairs: set[tuple[str, str]] = set()
    if not per_image:
        for refs in references:
            for ref in refs:
                corpus_pairs.update(zip(ref, ref[1:]))
    generated = 0
    matched = 0
    for cand, refs in zip(candidates, references):
        ref_pairs = corpus_pairs if not per_image else {
            pair for ref in refs for pair in zip(ref, ref[1:])}
        for pair in _anp_bigrams(cand, lexicon, polarity):
            generated += 1
            if pair in ref_pairs:
                matched += 1
    return generated, matched


def top_adjectives(candidates: list[Tokens], lexicon: AnpLexicon, k: int = 10) -> list[str]:
    """Lexicon adjectives ranked by frequency, ties lexicographic, cut to k."""
    counts = Counter(t for cand in candidates for t in cand if t in lexicon.adjectives)
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return ranked[:k]


@dataclass
class MetricReport:
    """One evaluation row; values raw (tables scale most of them x100)."""

    bleu: list[float]
    rouge_l: float
    cider: float
    entropy: float
    spice_n: float
    anp_generated: int
    anp_matched: int
    top_adjectives: list[str]
    num_candidates: int
    unk_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu, "rouge_l": self.rouge_l, "cider": self.cider,
            "entropy": self.entropy, "spice_n": self.spice_n,
            "anp_generated": self.anp_generated, "anp_matched": self.anp_matched,
            "top_adjectives": self.top_adjectives,
            "num_candidates": self.num_candidates, "unk_tokens": self.unk_tokens,
        }


def compute_report(candidates: list[Tokens], references: list[list[Tokens]],
                   lexicon: AnpLexicon, polarity: str | None = None,
                   per_image_anps: bool = True) -> MetricReport:
    """Full metric battery over one candidate/reference pairing."""
    _check_pairs(candidates, references)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        entropy = entropy_adjectives(candidates, lexicon)
    if polarity is not None:
        generated, matched = count_anps(candidates, references, lexicon,
                                        polarity, per_image=per_image_anps)
    else:
        generated = matched = 0
        for pol in POLARITIES:
            g, m = count_anps(candidates, references, lexicon, pol)
            generated += g
            matched += m
    return MetricReport(
        bleu=bleu_n(candidates, references),
        rouge_l=rouge_l(candidates, references),
        cider=cider(candidates, references),
        entropy=entropy,
        spice_n=spice_n(candidates, references, lexicon),
        anp_generated=generated,
        anp_matched=matched,
        top_adjectives=top_adjectives(candidates, lexicon),
        num_candidates=len(candidates),
        unk_tokens=sum(t == "<unk>" for cand in candidates for t in cand),
    )
