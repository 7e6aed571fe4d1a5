"""
Glyph error correction: confusable-glyph database, tokenizer, bigram context
scorer, greedy correction, and the prompt templates used when an external
language model does the correction.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

from models import (
    TOKEN_CJK,
    TOKEN_OTHER,
    TOKEN_WORD,
    CorrectionReport,
    DataError,
    GlyphDatabase,
    GlyphDatabaseError,
    PromptTemplate,
    Token,
    TokenDecision,
    TokenizedText,
    TransportError,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_CANDIDATES = 10
DEFAULT_TEMPLATE = 3
BASE_PROMPT = "What is the text in the image?"

PROMPT_TEMPLATES = {
    1: "The following text may contain errors: {text}. Possible replacements include: {candidates}. Please make corrections.",
    2: "Correct the text: '{text}'. Use these candidates for guidance: {candidates}.",
    3: "Original text: {text}, candidate words: {candidates}, please correct the incorrect words.",
}

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

# CJK Unified Ideographs: main block, extension A, extensions B-F and I, G-H.
# The compatibility supplement at 0x2F800-0x2FA1F sits between them and is excluded.
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0x20000, 0x2EE5F),
    (0x30000, 0x323AF),
)


def is_cjk(ch):
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def is_ascii_letter(ch):
    return ("a" <= ch <= "z") or ("A" <= ch <= "Z")


# ---------------------------------------------------------------------------
# Database
# ---------------------------------------------------------------------------

def _normalize_key(token):
    return token.lower() if token.isascii() else token


def load_database(data, max_candidates=DEFAULT_MAX_CANDIDATES):
    """
    Parse the glyph TSV: one entry per line, key TAB comma-separated candidates.
    Blank lines are skipped. Candidate lists are cut to max_candidates in file order.
    """
    if max_candidates < 0:
        raise GlyphDatabaseError(f"max_candidates must be non-negative, got {max_candidates}")
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise GlyphDatabaseError(f"glyph database is not valid UTF-8 (byte {e.start})") from e
    if data.startswith("\ufeff"):
        data = data[1:]

    entries = {}
    for lineno, raw in enumerate(data.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise GlyphDatabaseError(f"line {lineno}: expected 'key<TAB>candidates'")
        key = parts[0].strip()
        cands = [c.strip() for c in parts[1].split(",")]
        if not key or not all(cands):
            raise GlyphDatabaseError(f"line {lineno}: empty key or candidate")
        norm = _normalize_key(key)
        if norm in entries:
            raise GlyphDatabaseError(f"line {lineno}: duplicate key {key!r}")
        if any(_normalize_key(c) == norm for c in cands):
            raise GlyphDatabaseError(f"line {lineno}: key {key!r} listed among its own candidates")
        # repeated candidates collapse to their first occurrence
        cands = list(dict.fromkeys(cands))
        capped = tuple(cands[:max_candidates])
        if capped:
            entries[norm] = capped

    logger.debug("loaded %d glyph entries (cap %d)", len(entries), max_candidates)
    return GlyphDatabase(entries, max_candidates)


def read_database(path, max_candidates=DEFAULT_MAX_CANDIDATES):
    with open(path, "rb") as f:
        return load_database(f.read(), max_candidates)


def cap_database(db, max_candidates):
    """Same database with every list cut to max_candidates (entries left empty are dropped)."""
    entries = {k: v[:max_candidates] for k, v in db.entries.items() if v[:max_candidates]}
    return GlyphDatabase(entries, max_candidates)


def dump_database(db):
    return "".join(f"{key}\t{','.join(cands)}\n" for key, cands in db.entries.items())


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

def _char_kind(ch):
    if is_cjk(ch):
        return TOKEN_CJK
    if is_ascii_letter(ch):
        return TOKEN_WORD
    return TOKEN_OTHER


def tokenize(text):
    """
    Split into CJK ideographs (one token each), maximal ASCII-letter runs, and
    maximal runs of everything else. Spans are UTF-8 byte offsets.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"invalid UTF-8 at byte {e.start}") from e
    try:
        text.encode("utf-8")
    except UnicodeEncodeError as e:
        raise DataError(f"text is not encodable as UTF-8 at index {e.start}") from e

    tokens = []
    pos = 0
    i = 0
    n = len(text)
    while i < n:
        kind = _char_kind(text[i])
        j = i + 1
        if kind != TOKEN_CJK:
            while j < n and _char_kind(text[j]) == kind:
                j += 1
        surface = text[i:j]
        size = len(surface.encode("utf-8"))
        tokens.append(Token(kind, surface, (pos, pos + size)))
        pos += size
        i = j
    return TokenizedText(tuple(tokens))


def _is_lexical(tok):
    return tok.kind != TOKEN_OTHER


# ---------------------------------------------------------------------------
# Candidates and prompts
# ---------------------------------------------------------------------------

def lookup(token, db):
    if token.kind == TOKEN_OTHER:
        return ()
    return db.get(_normalize_key(token.surface), ())


def retrieve_candidates(text, db):
    """Candidate list per token of tokenize(text); 'other' tokens get []."""
    tokens = text if isinstance(text, TokenizedText) else tokenize(text)
    return [list(lookup(tok, db)) for tok in tokens.tokens]


def flatten_candidates(per_token):
    """Unique candidates in first-occurrence order."""
    return list(dict.fromkeys(c for cands in per_token for c in cands))


def build_prompt(text, candidates, template=DEFAULT_TEMPLATE):
    tid = template.id if isinstance(template, PromptTemplate) else PromptTemplate(int(template)).id
    return PROMPT_TEMPLATES[tid].format(text=text, candidates=", ".join(candidates))


def update_prompt(corrected_text, base_prompt=BASE_PROMPT):
    """Refined recognition prompt carrying the corrected characters."""
    return f"{base_prompt} The text may read: {corrected_text}"


# ---------------------------------------------------------------------------
# Context scorer
# ---------------------------------------------------------------------------

def scorer_sequence(tokens):
    """Lexical tokens only, ASCII words lowercased."""
    return [tok.surface.lower() if tok.kind == TOKEN_WORD else tok.surface for tok in tokens if _is_lexical(tok)]


@dataclass(frozen=True)
class ContextScorer:
    """
    Token bigram model with add-one smoothing. Prediction targets are the
    vocabulary tokens plus </s> and <unk>.
    """
    bigrams: Counter
    contexts: Counter
    vocab: frozenset

    @property
    def target_size(self):
        return len(self.vocab) + 2

    def vocabulary(self):
        return set(self.vocab) | {BOS, EOS, UNK}

    def _map(self, tok):
        return tok if tok in self.vocab else UNK

    def prob(self, prev, tok):
        prev = prev if prev == BOS else self._map(prev)
        tok = tok if tok == EOS else self._map(tok)
        return (self.bigrams[(prev, tok)] + 1) / (self.contexts[prev] + self.target_size)

    def log_prob(self, seq):
        total = 0.0
        prev = BOS
        for tok in list(seq) + [EOS]:
            total += math.log(self.prob(prev, tok))
            prev = tok
        return total


def train_scorer(corpus):
    if isinstance(corpus, str):
        corpus = [corpus]
    corpus = list(corpus)
    if not corpus:
        raise DataError("cannot train a context scorer on an empty corpus")
    bigrams = Counter()
    contexts = Counter()
    vocab = set()
    for line in corpus:
        seq = scorer_sequence(tokenize(line).tokens)
        vocab.update(seq)
        marked = [BOS] + seq + [EOS]
        for prev, tok in zip(marked, marked[1:]):
            bigrams[(prev, tok)] += 1
            contexts[prev] += 1
    return ContextScorer(bigrams, contexts, frozenset(vocab))


def read_scorer(path):
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    return train_scorer(lines)


def score_context(tokens, position, replacement, scorer):
    """Log-probability of the sequence with tokens[position] replaced."""
    toks = list(tokens.tokens if isinstance(tokens, TokenizedText) else tokens)
    if not 0 <= position < len(toks):
        raise DataError(f"position {position} outside 0..{len(toks) - 1}")
    old = toks[position]
    toks[position] = Token(old.kind, replacement, old.span)
    return scorer.log_prob(scorer_sequence(toks))


# ---------------------------------------------------------------------------
# Correction
# ---------------------------------------------------------------------------

def correct(text, db, scorer, margin=0.0):
    """
    Greedy left-to-right correction. A token is replaced by its best candidate
    only when that candidate's score beats the original's by more than margin;
    the working sequence carries earlier replacements forward.
    """
    if margin < 0:
        raise DataError(f"margin must be non-negative, got {margin}")
    tokens = list(tokenize(text).tokens)
    decisions = []
    for i, tok in enumerate(tokens):
        cands = lookup(tok, db)
        if not cands:
            continue
        base = score_context(tokens, i, tok.surface, scorer)
        scored = [(tok.surface, base)]
        best, best_score = tok.surface, base
        for cand in cands:
            s = score_context(tokens, i, cand, scorer)
            scored.append((cand, s))
            if s > best_score:
                best, best_score = cand, s
        chosen = best if best_score - base > margin else tok.surface
        if chosen != tok.surface:
            tokens[i] = Token(tok.kind, chosen, tok.span)
        decisions.append(TokenDecision(i, tok.surface, tuple(cands), chosen, tuple(scored)))

    corrected = "".join(t.surface for t in tokens)
    return CorrectionReport(text, corrected, tuple(decisions))


def correct_via_llm(text, db, template, backend):
    """
    Build the correction prompt and hand it to a text-generation backend.
    backend.complete(prompt, text) returns the corrected text.
    """
    per_token = retrieve_candidates(text, db)
    prompt = build_prompt(text, flatten_candidates(per_token), template)
    try:
        reply = backend.complete(prompt, text)
    except TransportError as e:
        e.report = CorrectionReport(text, text, (), prompt)
        raise
    return CorrectionReport(text, reply, (), prompt)
