"""
Evaluation protocol: language-aware segmentation, BLEU-1..4 (sentence,
corpus-pooled and sentence-averaged), word accuracy and the 7:1:2 split.
"""
from __future__ import annotations

import math
import random
from collections import Counter

from models import BleuReport, DataError, SplitAssignment
from glyph_utils import is_ascii_letter, is_cjk

MAX_ORDER = 4


def segment(text):
    """
    CJK ideographs and digits become single tokens, ASCII letter runs become
    lowercase words, everything else is dropped.
    """
    tokens = []
    word = []
    for ch in text:
        if is_ascii_letter(ch):
            word.append(ch.lower())
            continue
        if word:
            tokens.append("".join(word))
            word = []
        if is_cjk(ch) or ("0" <= ch <= "9"):
            tokens.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def match_counts(hyp_tokens, ref_tokens, max_order=MAX_ORDER):
    """Per order: (clipped matches, hypothesis n-gram total)."""
    out = []
    for n in range(1, max_order + 1):
        hyp = ngram_counts(hyp_tokens, n)
        ref = ngram_counts(ref_tokens, n)
        clipped = sum(min(c, ref[g]) for g, c in hyp.items())
        out.append((clipped, max(len(hyp_tokens) - n + 1, 0)))
    return out


def _report(matches, hyp_len, ref_len):
    """
    BLEU from pooled counts. An order with no hypothesis n-grams has precision
    1.0 (nothing to get wrong); a zero precision zeroes that order and above.
    """
    if hyp_len == 0:
        zeros = (0.0,) * MAX_ORDER
        return BleuReport(zeros, 0.0, zeros, 0, ref_len)

    precisions = tuple(m / t if t else 1.0 for m, t in matches)
    bp = math.exp(1.0 - ref_len / hyp_len) if hyp_len < ref_len else 1.0

    scores = []
    log_sum = 0.0
    zeroed = False
    for n, p in enumerate(precisions, start=1):
        if p == 0.0:
            zeroed = True
        if zeroed:
            scores.append(0.0)
            continue
        log_sum += math.log(p)
        scores.append(bp * math.exp(log_sum / n))
    return BleuReport(tuple(scores), bp, precisions, hyp_len, ref_len)


def bleu(hyp, ref):
    h, r = segment(hyp), segment(ref)
    return _report(match_counts(h, r), len(h), len(r))


def corpus_bleu(pairs):
    """Corpus BLEU: clipped matches, totals and lengths pooled over all pairs."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("corpus BLEU needs at least one (hypothesis, reference) pair")
    matched = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        h, r = segment(hyp), segment(ref)
        for i, (m, t) in enumerate(match_counts(h, r)):
            matched[i] += m
            totals[i] += t
        hyp_len += len(h)
        ref_len += len(r)
    return _report(list(zip(matched, totals)), hyp_len, ref_len)


def mean_sentence_bleu(pairs):
    """Average of per-pair sentence BLEU-1..4."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("sentence-averaged BLEU needs at least one pair")
    sums = [0.0] * MAX_ORDER
    for hyp, ref in pairs:
        for i, v in enumerate(bleu(hyp, ref).bleu):
            sums[i] += v
    return tuple(s / len(pairs) for s in sums)


def normalize_word(text):
    """Lowercase; keep only ASCII letters and digits."""
    return "".join(ch for ch in text.lower() if is_ascii_letter(ch) or "0" <= ch <= "9")


def normalize_word_cjk(text):
    """normalize_word that also keeps CJK ideographs, for Chinese labels."""
    return "".join(ch for ch in text.lower() if is_ascii_letter(ch) or "0" <= ch <= "9" or is_cjk(ch))


def _accuracy(pairs, normalize):
    pairs = list(pairs)
    if not pairs:
        raise DataError("word accuracy needs at least one (prediction, ground truth) pair")
    hits = sum(1 for hyp, gt in pairs if normalize(hyp) == normalize(gt))
    return hits / len(pairs)


def word_accuracy(pairs):
    return _accuracy(pairs, normalize_word)


def cjk_word_accuracy(pairs):
    """Word accuracy under normalize_word_cjk; Chinese text is compared, not dropped."""
    return _accuracy(pairs, normalize_word_cjk)



def split_sizes(n):
    """(train, val, test) = (floor(0.7n), round-half-up(0.1n), rest) in integer arithmetic."""
    train = (7 * n) // 10
    val = (n + 5) // 10
    return train, val, n - train - val


def split_dataset(ids, seed=0):
    ids = list(ids)
    dupes = [i for i, c in Counter(ids).items() if c > 1]
    if dupes:
        raise DataError(f"duplicate ids in split input: {sorted(dupes, key=str)[:5]}")
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    n_train, n_val, _ = split_sizes(len(ids))
    return SplitAssignment(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
    )
