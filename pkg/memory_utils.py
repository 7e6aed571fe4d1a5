"""
Memory module kernel: project features into the 128-d pattern space, pick the
top-K stored patterns by cosine similarity, and add their softmax-weighted
average (projected back up) to the input features.

Bank file layout (MBK1, little endian): magic "MBK1", D u16, M u16, then
float64 patterns (M x 128), w_down (128 x D), b_down (128), w_up (D x 128),
b_up (D), all row-major.
"""
from __future__ import annotations

import logging
import struct
import time

import numpy as np

from models import PATTERN_DIM, DataError, MemoryBank, RetrievalResult

logger = logging.getLogger(__name__)

DEFAULT_K = 64
DEFAULT_M = 256
ZERO_NORM = 1e-12

MBK1_MAGIC = b"MBK1"
MBK1_HEADER = struct.Struct("<4sHH")


def init_bank(d, m=DEFAULT_M, seed=0):
    if d < 1 or m < 1:
        raise DataError(f"bank dimensions must be positive, got D={d}, M={m}")
    rng = np.random.default_rng(seed)
    patterns = rng.standard_normal((m, PATTERN_DIM)) / np.sqrt(PATTERN_DIM)
    w_down = rng.standard_normal((PATTERN_DIM, d)) / np.sqrt(d)
    w_up = rng.standard_normal((d, PATTERN_DIM)) / np.sqrt(PATTERN_DIM)
    return MemoryBank(patterns, w_down, np.zeros(PATTERN_DIM), w_up, np.zeros(d))


def _as_features(features, bank):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 1:
        raise DataError(f"features must be a non-empty B x L x D tensor, got shape {f.shape}")
    if f.shape[2] != bank.d_model:
        raise DataError(f"feature dimension {f.shape[2]} does not match bank dimension {bank.d_model}")
    if not np.all(np.isfinite(f)):
        raise DataError("features contain non-finite values")
    return f


def _check_k(k, bank):
    if k < 1:
        raise DataError(f"top-K must be at least 1, got {k}")
    if k > bank.m_count:
        raise DataError(f"top-K {k} exceeds the {bank.m_count} stored patterns")


def project_down(features, bank):
    return features @ bank.w_down.T + bank.b_down


def project_up(vectors, bank):
    return vectors @ bank.w_up.T + bank.b_up


def cosine_scores(queries, patterns):
    """Cosine similarity of every query against every pattern; zero-norm vectors score 0."""
    qn = np.linalg.norm(queries, axis=-1, keepdims=True)
    pn = np.linalg.norm(patterns, axis=-1)
    q_safe = np.where(qn < ZERO_NORM, 1.0, qn)
    p_safe = np.where(pn < ZERO_NORM, 1.0, pn)
    scores = (queries / q_safe) @ (patterns / p_safe[:, None]).T
    scores = np.where(qn < ZERO_NORM, 0.0, scores)
    scores = np.where(pn < ZERO_NORM, 0.0, scores)
    return np.clip(scores, -1.0, 1.0)


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def retrieve_projected(queries, bank, k=DEFAULT_K):
    """Top-K retrieval for queries already in pattern space (B x L x 128)."""
    _check_k(k, bank)
    scores = cosine_scores(np.asarray(queries, dtype=np.float64), bank.patterns)
    # stable sort on the negated score keeps ascending index among ties
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    top = np.take_along_axis(scores, order, axis=-1)
    return RetrievalResult(indices=order, scores=top, weights=_softmax(top))


def retrieve(features, bank, k=DEFAULT_K):
    f = _as_features(features, bank)
    return retrieve_projected(project_down(f, bank), bank, k)


def residual(result, bank):
    """w_up applied to the weighted average of the selected patterns."""
    selected = bank.patterns[result.indices]
    mixed = np.einsum("blk,blkp->blp", result.weights, selected)
    return project_up(mixed, bank)


def enhance(features, bank, k=DEFAULT_K):
    f = _as_features(features, bank)
    result = retrieve_projected(project_down(f, bank), bank, k)
    return f + residual(result, bank)


def timed_enhance(features, bank, k=DEFAULT_K):
    """enhance plus wall-clock seconds, for the bench smoke stage."""
    start = time.perf_counter()
    out = enhance(features, bank, k)
    elapsed = time.perf_counter() - start
    logger.debug("memory enhance %s with K=%d took %.4fs", out.shape, k, elapsed)
    return out, elapsed


def frame_features(frame, grid=(4, 8), patch=8):
    """
    Pool an RGB event frame into a (1, rows*cols, patch*patch) token grid.
    Each token is the signed polarity map (red minus blue) of one patch after
    nearest-neighbour resampling, in [-1, 1].
    """
    img = np.asarray(frame, dtype=np.float64)
    rows, cols = grid
    h, w = img.shape[:2]
    ys = (np.arange(rows * patch) * h) // (rows * patch)
    xs = (np.arange(cols * patch) * w) // (cols * patch)
    sampled = img[ys][:, xs]
    signed = (sampled[..., 0] - sampled[..., 2]) / 255.0
    tokens = signed.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(rows * cols, patch * patch)
    return tokens[None, :, :]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def serialize_bank(bank):
    header = MBK1_HEADER.pack(MBK1_MAGIC, bank.d_model, bank.m_count)
    body = np.concatenate([
        bank.patterns.ravel(),
        bank.w_down.ravel(),
        bank.b_down,
        bank.w_up.ravel(),
        bank.b_up,
    ]).astype("<f8")
    return header + body.tobytes()


def parse_bank(data):
    if len(data) < MBK1_HEADER.size:
        raise DataError("truncated memory bank header")
    magic, d, m = MBK1_HEADER.unpack_from(data, 0)
    if magic != MBK1_MAGIC:
        raise DataError(f"bad memory bank magic {magic!r}")
    sizes = [m * PATTERN_DIM, PATTERN_DIM * d, PATTERN_DIM, d * PATTERN_DIM, d]
    expected = MBK1_HEADER.size + 8 * sum(sizes)
    if len(data) != expected:
        raise DataError(f"memory bank file is {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=MBK1_HEADER.size)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return MemoryBank(
        parts[0].reshape(m, PATTERN_DIM),
        parts[1].reshape(PATTERN_DIM, d),
        parts[2],
        parts[3].reshape(d, PATTERN_DIM),
        parts[4],
    )


def save_bank(bank, path):
    with open(path, "wb") as f:
        f.write(serialize_bank(bank))


def load_bank(path):
    with open(path, "rb") as f:
        return parse_bank(f.read())


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def brute_force_retrieve(queries, patterns, k):
    """Scalar reference: full sort of (-score, index) per query."""
    q = np.asarray(queries, dtype=np.float64)
    b, l, _ = q.shape
    indices = np.zeros((b, l, k), dtype=np.int64)
    scores = np.zeros((b, l, k))
    for bi in range(b):
        for li in range(l):
            vec = q[bi, li]
            qn = float(np.sqrt(np.dot(vec, vec)))
            ranked = []
            for idx, pat in enumerate(patterns):
                pn = float(np.sqrt(np.dot(pat, pat)))
                if qn < ZERO_NORM or pn < ZERO_NORM:
                    s = 0.0
                else:
                    s = float(np.dot(vec, pat)) / (qn * pn)
                    s = min(1.0, max(-1.0, s))
                ranked.append((-s, idx))
            ranked.sort()
            for j, (neg, idx) in enumerate(ranked[:k]):
                indices[bi, li, j] = idx
                scores[bi, li, j] = -neg
    return indices, scores


def finite_difference_check(features, bank, k=DEFAULT_K, eps=1e-6, n_probes=8, seed=0):
    """
    Compare the analytic Jacobian-vector product of enhance (with the top-K set
    held fixed) against central differences along random directions. Returns the
    largest absolute discrepancy.
    """
    f = _as_features(features, bank)
    rng = np.random.default_rng(seed)
    base = retrieve(f, bank, k)
    worst = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(f.shape)
        plus = f + eps * v
        minus = f - eps * v
        if not (np.array_equal(retrieve(plus, bank, k).indices, base.indices)
                and np.array_equal(retrieve(minus, bank, k).indices, base.indices)):
            continue
        numeric = (enhance(plus, bank, k) - enhance(minus, bank, k)) / (2 * eps)
        analytic = _enhance_jvp(f, v, bank, base)
        worst = max(worst, float(np.max(np.abs(numeric - analytic))))
    return worst


def _enhance_jvp(f, v, bank, base):
    """Directional derivative of enhance at f along v for a fixed selection."""
    q = project_down(f, bank)
    dq = v @ bank.w_down.T
    pats = bank.patterns[base.indices]
    pnorm = np.linalg.norm(pats, axis=-1)
    qn = np.linalg.norm(q, axis=-1, keepdims=True)
    qhat = q / qn
    dqhat = (dq - qhat * np.sum(qhat * dq, axis=-1, keepdims=True)) / qn
    dscores = np.einsum("blp,blkp->blk", dqhat, pats) / pnorm
    w = base.weights
    dw = w * (dscores - np.sum(w * dscores, axis=-1, keepdims=True))
    dmixed = np.einsum("blk,blkp->blp", dw, pats)
    return v + dmixed @ bank.w_up.T


def run_oracle_suite(n_cases=200, seed=0, k_grid=(1, 3, 32, 64, 128)):
    """
    Randomised retrieve-versus-full-sort comparison plus the identical-pattern
    enhance check. Returns a dict of counts and worst errors.
    """
    rng = np.random.default_rng(seed)
    mismatches = 0
    worst_score = 0.0
    for case in range(n_cases):
        m = int(rng.integers(1, 257))
        k = int(k_grid[case % len(k_grid)])
        k = min(k, m)
        d = int(rng.integers(1, 65))
        b, l = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        bank = init_bank(d, m, seed=int(rng.integers(0, 2**31)))
        feats = rng.standard_normal((b, l, d))
        got = retrieve(feats, bank, k)
        idx, sc = brute_force_retrieve(project_down(feats, bank), bank.patterns, k)
        if not np.array_equal(got.indices, idx):
            mismatches += 1
        worst_score = max(worst_score, float(np.max(np.abs(got.scores - sc))))

    d, m = 16, 32
    base = init_bank(d, m, seed=seed)
    v = rng.standard_normal(PATTERN_DIM)
    same = MemoryBank(np.tile(v, (m, 1)), base.w_down, base.b_down, base.w_up, base.b_up)
    feats = rng.standard_normal((2, 3, d))
    expected = feats + project_up(v, same)
    worst_identical = max(
        float(np.max(np.abs(enhance(feats, same, kk) - expected))) for kk in (1, 3, m)
    )

    return {
        "cases": n_cases,
        "index_mismatches": mismatches,
        "max_score_error": worst_score,
        "identical_pattern_error": worst_identical,
        "passed": mismatches == 0 and worst_score <= 1e-9 and worst_identical <= 1e-6,
    }
