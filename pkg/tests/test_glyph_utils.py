import math
import random

import pytest

from backend_utils import EchoBackend, HttpBackend, IdentityBackend, inject_noise
from glyph_utils import (
    BASE_PROMPT,
    BOS,
    EOS,
    UNK,
    build_prompt,
    cap_database,
    correct,
    correct_via_llm,
    dump_database,
    flatten_candidates,
    is_cjk,
    load_database,
    lookup,
    retrieve_candidates,
    score_context,
    scorer_sequence,
    tokenize,
    train_scorer,
    update_prompt,
)
from metrics_utils import corpus_bleu
from models import (
    TOKEN_CJK,
    TOKEN_OTHER,
    TOKEN_WORD,
    DataError,
    GlyphDatabaseError,
    RecognizerBackend,
    TransportError,
)

SQUIRREL_TEXT = "三只枫鼠 Three Squirrels"
SQUIRREL_CANDIDATES = "王, 兰, 主, 丰, 二, 兄, 口, 叶, 叮, 松, 柏, 柳, 杨, Tree, There, Squire, Squires, Squills"

BASE_SENTENCES = [
    "三只松鼠在树上",
    "松鼠吃松果",
    "小松鼠很可爱",
    "the cat sat on the mat",
    "a cat and a dog",
    "my cat likes fish",
]


# ---------------------------------------------------------------------------
# Database
# ---------------------------------------------------------------------------

def test_shipped_database(glyph_db):
    assert glyph_db.get("枫") == ("松", "柏", "柳", "杨")
    assert "three" in glyph_db
    assert glyph_db.get("squirrels") == ("Squire", "Squires", "Squills")


def test_database_parsing_rules():
    db = load_database("\ufeffAbc\tx,y,x,z\n\n中\t仲\r\n", max_candidates=2)
    assert db.get("abc") == ("x", "y")
    assert db.get("中") == ("仲",)
    assert len(db) == 2
    assert dump_database(db) == "abc\tx,y\n中\t仲\n"


@pytest.mark.parametrize(
    "body, message",
    [
        ("a\tb\nA\tc\n", "line 2: duplicate key"),
        ("a\tb,A\n", "own candidates"),
        ("a b\n", "line 1: expected"),
        ("a\tb,,c\n", "empty"),
    ],
)
def test_database_errors(body, message):
    with pytest.raises(GlyphDatabaseError, match=message):
        load_database(body)


def test_zero_cap_drops_everything(glyph_db):
    assert len(load_database("a\tb\n", max_candidates=0)) == 0
    assert len(cap_database(glyph_db, 0)) == 0
    assert cap_database(glyph_db, 2).get("三") == ("王", "兰")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

def test_tokenize_mixed_text():
    toks = tokenize("Hi, 你好!").tokens
    assert [(t.kind, t.surface, t.span) for t in toks] == [
        (TOKEN_WORD, "Hi", (0, 2)),
        (TOKEN_OTHER, ", ", (2, 4)),
        (TOKEN_CJK, "你", (4, 7)),
        (TOKEN_CJK, "好", (7, 10)),
        (TOKEN_OTHER, "!", (10, 11)),
    ]


@pytest.mark.parametrize("cp, expected", [
    (0x4E00, True), (0x3400, True), (0x20000, True), (0x2EE5F, True), (0x30000, True), (0x323AF, True),
    (0x2F800, False), (0x2FA1F, False), (0xF900, False), (0x3000, False),
])
def test_is_cjk_covers_unified_ideographs_only(cp, expected):
    assert is_cjk(chr(cp)) is expected


def test_tokenize_digits_and_letters():
    assert tokenize("abc123def").surfaces() == ["abc", "123", "def"]
    assert tokenize("").tokens == ()


@pytest.mark.parametrize("text", ["", "三只枫鼠 Three Squirrels", "a1 b2,c3", "é𠀀x", "  \t  "])
def test_tokenize_reconstructs(text):
    toks = tokenize(text)
    assert toks.reconstruct() == text
    spans = [t.span for t in toks.tokens]
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    if spans:
        assert spans[-1][1] == len(text.encode("utf-8"))


def test_tokenize_rejects_bad_utf8():
    with pytest.raises(DataError):
        tokenize(b"\xff\xfe")


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------

def test_candidates_in_first_occurrence_order(glyph_db):
    per_token = retrieve_candidates(SQUIRREL_TEXT, glyph_db)
    assert ", ".join(flatten_candidates(per_token)) == SQUIRREL_CANDIDATES


def test_prompt_templates_verbatim(glyph_db):
    cands = flatten_candidates(retrieve_candidates(SQUIRREL_TEXT, glyph_db))
    assert build_prompt(SQUIRREL_TEXT, cands, 1) == (
        f"The following text may contain errors: {SQUIRREL_TEXT}. "
        f"Possible replacements include: {SQUIRREL_CANDIDATES}. Please make corrections."
    )
    assert build_prompt(SQUIRREL_TEXT, cands, 2) == (
        f"Correct the text: '{SQUIRREL_TEXT}'. Use these candidates for guidance: {SQUIRREL_CANDIDATES}."
    )
    assert build_prompt(SQUIRREL_TEXT, cands, 3) == (
        "Original text: 三只枫鼠 Three Squirrels, candidate words: 王, 兰, 主, 丰, 二, 兄, 口, 叶, 叮, "
        "松, 柏, 柳, 杨, Tree, There, Squire, Squires, Squills, please correct the incorrect words."
    )


def test_prompt_rejects_unknown_template():
    with pytest.raises(DataError):
        build_prompt("x", [], 4)


def test_update_prompt():
    assert update_prompt("三只松鼠") == f"{BASE_PROMPT} The text may read: 三只松鼠"


# ---------------------------------------------------------------------------
# Context scorer
# ---------------------------------------------------------------------------

def test_bigram_hand_arithmetic():
    scorer = train_scorer(["a b", "a c"])
    assert scorer.target_size == 5
    assert scorer.prob(BOS, "a") == pytest.approx(3 / 7)
    assert scorer.prob("a", "b") == pytest.approx(2 / 7)
    assert scorer.prob("a", "zzz") == pytest.approx(1 / 7)
    assert scorer.prob("b", EOS) == pytest.approx(2 / 6)
    assert scorer.log_prob(["a", "b"]) == pytest.approx(math.log(3 / 7) + math.log(2 / 7) + math.log(2 / 6))


def test_scorer_rows_sum_to_one():
    scorer = train_scorer(BASE_SENTENCES)
    targets = sorted(scorer.vocab) + [EOS, UNK]
    for prev in sorted(scorer.vocab) + [BOS, UNK]:
        assert sum(scorer.prob(prev, t) for t in targets) == pytest.approx(1.0)


def test_scorer_is_case_insensitive_for_words():
    scorer = train_scorer(["The Cat"])
    assert scorer.vocab == frozenset({"the", "cat"})
    upper = scorer.log_prob(scorer_sequence(tokenize("THE CAT").tokens))
    assert upper == scorer.log_prob(["the", "cat"])


def test_score_context_position_check():
    scorer = train_scorer(["a b"])
    toks = tokenize("a b")
    assert score_context(toks, 2, "b", scorer) == scorer.log_prob(["a", "b"])
    with pytest.raises(DataError):
        score_context(toks, 3, "x", scorer)


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        train_scorer([])


# ---------------------------------------------------------------------------
# Correction
# ---------------------------------------------------------------------------

def test_corrects_squirrels(glyph_db):
    scorer = train_scorer(["三只松鼠", "三只松鼠很可爱", "我有三只猫"])
    report = correct("三只枫鼠", glyph_db, scorer)
    assert report.corrected == "三只松鼠"
    assert report.n_replacements == 1
    changed = [d for d in report.decisions if d.changed]
    assert changed[0].position == 2
    assert changed[0].surface == "枫"
    assert changed[0].chosen == "松"


def test_closed_loop_recovers_noise(symmetric_db):
    scorer = train_scorer(BASE_SENTENCES)
    rng = random.Random(0)
    labels = [BASE_SENTENCES[i % len(BASE_SENTENCES)] for i in range(1000)]
    noisy = [inject_noise(label, symmetric_db, 0.5, rng)[0] for label in labels]
    fixed = [correct(text, symmetric_db, scorer).corrected for text in noisy]

    before = corpus_bleu(zip(noisy, labels)).bleu[0]
    after = corpus_bleu(zip(fixed, labels)).bleu[0]
    assert before < 1.0
    assert after > before
    assert after >= 0.99


def test_margin_is_monotone(symmetric_db):
    scorer = train_scorer(BASE_SENTENCES)
    text = "三只枫鼬 the cap sat on the mat"
    counts = [correct(text, symmetric_db, scorer, m).n_replacements for m in (0.0, 0.5, 1.0, 2.0, 5.0, 50.0)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0


def test_tokens_without_candidates_are_untouched(glyph_db):
    scorer = train_scorer(["你好"])
    assert correct("hello, 世界!", glyph_db, scorer).corrected == "hello, 世界!"
    assert correct("", glyph_db, scorer).decisions == ()


def test_negative_margin_rejected(glyph_db):
    with pytest.raises(DataError):
        correct("三", glyph_db, train_scorer(["三"]), -1.0)


# ---------------------------------------------------------------------------
# Prompt backends
# ---------------------------------------------------------------------------

def test_echo_and_identity_backends(glyph_db):
    echo = correct_via_llm(SQUIRREL_TEXT, glyph_db, 3, EchoBackend())
    assert echo.corrected == echo.prompt_used
    assert echo.prompt_used.startswith("Original text: 三只枫鼠")
    same = correct_via_llm(SQUIRREL_TEXT, glyph_db, 1, IdentityBackend())
    assert same.corrected == SQUIRREL_TEXT


def test_http_backend_roundtrip(glyph_db, live_backend):
    url, _ = live_backend("identity")
    spec = RecognizerBackend("external_http", endpoint=url, timeout_ms=5000)
    for template in (1, 2, 3):
        report = correct_via_llm(SQUIRREL_TEXT, glyph_db, template, HttpBackend(spec))
        assert report.corrected == SQUIRREL_TEXT


def test_http_failure_preserves_original(glyph_db, live_backend):
    url, _ = live_backend("fail")
    spec = RecognizerBackend("external_http", endpoint=url, timeout_ms=5000)
    with pytest.raises(TransportError) as info:
        correct_via_llm(SQUIRREL_TEXT, glyph_db, 3, HttpBackend(spec))
    assert info.value.status == 500
    assert info.value.report.original == SQUIRREL_TEXT
    assert info.value.report.corrected == SQUIRREL_TEXT


CONFUSABLE_SETS = {
    "枫": ["松", "柏", "柳", "杨"],
    "苍": ["沧", "抢", "枪"],
    "吹": ["炊", "饮", "欢"],
    "cap": ["map", "nap", "lap"],
    "deed": ["need", "seed", "reed"],
}


def _closed_loop_fixture(rng):
    """
    Glyph database plus the slot tokens sentences are built around. The
    published sets and half of the generated pairs list both directions; the
    other generated pairs are one-way, so substituting their keys is final.
    """
    entries = {key: list(cands) for key, cands in CONFUSABLE_SETS.items()}
    for key, cands in CONFUSABLE_SETS.items():
        for c in cands:
            entries.setdefault(c, []).append(key)
    generated = [chr(cp) for cp in range(0x6100, 0x6100 + 60)]
    for i in range(0, 60, 2):
        a, b = generated[i], generated[i + 1]
        entries[a] = [b]
        if i % 4 == 0:
            entries[b] = [a]
    db_text = "".join(f"{k}\t{','.join(v)}\n" for k, v in entries.items())

    slots = list(entries)
    rng.shuffle(slots)
    return load_database(db_text), slots


def _filler(rng, slot):
    if slot.isascii():
        return " ".join("".join(rng.choice("bfhjkvwxz") for _ in range(4)) for _ in range(2))
    return "".join(chr(rng.randrange(0x5000, 0x5100)) for _ in range(2))


def _sentence(rng, slot):
    left, right = _filler(rng, slot), _filler(rng, slot)
    return f"{left} {slot} {right}" if slot.isascii() else f"{left}{slot}{right}"


def test_closed_loop_recovers_exactly_the_recoverable_errors():
    rng = random.Random(2024)
    db, slots = _closed_loop_fixture(rng)
    bases = [_sentence(rng, slots[i % len(slots)]) for i in range(300)]
    labels = [rng.choice(bases) for _ in range(1000)]
    scorer = train_scorer(labels)

    noisy, injected = [], []
    for n, label in enumerate(labels):
        text, subs = inject_noise(label, db, 0.2, rng)
        noisy.append(text)
        injected.extend((n, pos, true) for pos, true, _ in subs)
    fixed = [correct(text, db, scorer).corrected for text in noisy]

    # exhaustive substitution scoring, independent of the greedy corrector
    recoverable, ties = set(), set()
    for n, pos, true in injected:
        toks = tokenize(noisy[n]).tokens
        options = [toks[pos].surface, *lookup(toks[pos], db)]
        if true not in options[1:]:
            continue
        scores = {o: score_context(toks, pos, o, scorer) for o in options}
        best_other = max(s for o, s in scores.items() if o != true)
        if scores[true] > best_other:
            recoverable.add((n, pos))
        elif scores[true] == best_other:
            ties.add((n, pos))

    recovered = {
        (n, pos) for n, pos, true in injected
        if tokenize(fixed[n]).tokens[pos].surface == true
    }
    assert recoverable
    assert len(recoverable) < len(injected)
    assert recoverable <= recovered
    assert recovered - recoverable <= ties
    assert corpus_bleu(zip(fixed, labels)).bleu[0] > corpus_bleu(zip(noisy, labels)).bleu[0]

    for text, out in zip(noisy, fixed):
        before, after = tokenize(text).tokens, tokenize(out).tokens
        assert len(before) == len(after)
        for a, b in zip(before, after):
            if not lookup(a, db):
                assert a.surface == b.surface



def test_tokenizer_reconstructs_random_strings():
    rng = random.Random(99)
    pool = "abcXYZ019 ,.!-_\t三只枫鼠松é𠀀ü"
    for _ in range(1000):
        text = "".join(rng.choice(pool) for _ in range(rng.randint(0, 30)))
        toks = tokenize(text)
        assert toks.reconstruct() == text
        assert sum(t.span[1] - t.span[0] for t in toks.tokens) == len(text.encode("utf-8"))
