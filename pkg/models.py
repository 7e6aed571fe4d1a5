"""
Domain types shared by every estr module, plus the error hierarchy and the
JSONL record helpers used for predictions, labels and manifests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class EstrError(Exception):
    """Base class for every error raised by the toolkit."""


class DataError(EstrError, ValueError):
    """Input data or configuration failed validation (CLI exit code 2)."""


class EventFormatError(DataError):
    pass


class GlyphDatabaseError(DataError):
    pass


class ConfigError(DataError):
    pass


class ManifestError(DataError):
    pass


class TransportError(EstrError, RuntimeError):
    """
    The external recognizer could not be reached or answered badly (exit code 3).
    report: CorrectionReport with the original text preserved, when raised from
    a correction call.
    """

    def __init__(self, message, endpoint=None, status=None, report=None):
        super().__init__(message)
        self.endpoint = endpoint
        self.status = status
        self.report = report


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

POLARITY_POSITIVE = 1
POLARITY_NEGATIVE = -1


@dataclass(frozen=True)
class EventPoint:
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class ParseDiagnostics:
    resorted: bool = False
    n_records: int = 0
    had_header: bool = False


def _frozen(arr, dtype):
    a = np.ascontiguousarray(arr, dtype=dtype)
    if a.ndim != 1:
        a = a.reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """
    Column-oriented event stream. x/y are uint16 pixel coordinates, t is int64
    microseconds (non-decreasing), p is int8 in {+1, -1}.
    """
    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    source_id: str = ""
    diagnostics: ParseDiagnostics = field(default_factory=ParseDiagnostics)

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, np.uint16))
        object.__setattr__(self, "y", _frozen(self.y, np.uint16))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventFormatError("event columns have different lengths")

    @classmethod
    def empty(cls, width, height, source_id=""):
        return cls(width, height, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), source_id)

    @classmethod
    def from_points(cls, width, height, points: Iterable[EventPoint], source_id=""):
        pts = list(points)
        return cls(
            width,
            height,
            np.array([e.x for e in pts]),
            np.array([e.y for e in pts]),
            np.array([e.t for e in pts]),
            np.array([e.p for e in pts]),
            source_id,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> EventPoint:
        return EventPoint(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[EventPoint]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.source_id == other.source_id
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None


@dataclass(frozen=True)
class StreamStats:
    n_events: int
    n_positive: int
    n_negative: int
    duration_us: int
    events_per_second: float
    # 9 rows x 16 columns over the sensor
    spatial_histogram: tuple

    def to_dict(self):
        return {
            "n_events": self.n_events,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "duration_us": self.duration_us,
            "events_per_second": self.events_per_second,
            "spatial_histogram": [list(row) for row in self.spatial_histogram],
        }


# ---------------------------------------------------------------------------
# Frames and simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrameStack:
    """frames: uint8 array T x H x W x 3; window_bounds: T (start, end) pairs in µs."""
    frames: np.ndarray
    window_bounds: tuple

    @property
    def t_count(self):
        return len(self.window_bounds)


@dataclass(frozen=True, eq=False)
class IntensitySequence:
    """frames: float array N x H x W in [0, 1]; timestamps: strictly increasing µs."""
    frames: np.ndarray
    timestamps: tuple

    def __post_init__(self):
        if not isinstance(self.frames, np.ndarray):
            shapes = {np.shape(f) for f in self.frames}
            if len(shapes) > 1:
                raise DataError(f"intensity frames differ in geometry: {sorted(shapes)}")
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise DataError(f"intensity frames must be N x H x W, got shape {frames.shape}")
        if frames.shape[0] < 1:
            raise DataError("intensity sequence needs at least one frame")
        if len(self.timestamps) != frames.shape[0]:
            raise DataError("one timestamp per frame is required")
        ts = tuple(int(v) for v in self.timestamps)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


@dataclass(frozen=True)
class SimulatorConfig:
    contrast_threshold: float = 0.2
    log_eps: float = 1e-3

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ConfigError(f"contrast threshold must be positive, got {self.contrast_threshold}")
        if not self.log_eps > 0:
            raise ConfigError(f"log epsilon must be positive, got {self.log_eps}")


# ---------------------------------------------------------------------------
# Memory kernel
# ---------------------------------------------------------------------------

PATTERN_DIM = 128


@dataclass(frozen=True, eq=False)
class MemoryBank:
    """
    patterns: M x 128. w_down: 128 x D with b_down (128,), mapping D -> 128.
    w_up: D x 128 with b_up (D,), mapping 128 -> D.
    """
    patterns: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray

    def __post_init__(self):
        for name in ("patterns", "w_down", "b_down", "w_up", "b_up"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"memory bank {name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, dp = self.patterns.shape
        d = self.w_down.shape[1]
        if m < 1 or dp != PATTERN_DIM:
            raise DataError(f"patterns must be M x {PATTERN_DIM} with M >= 1, got {self.patterns.shape}")
        if self.w_down.shape != (PATTERN_DIM, d) or self.b_down.shape != (PATTERN_DIM,):
            raise DataError("down projection must be 128 x D with a 128-d bias")
        if self.w_up.shape != (d, PATTERN_DIM) or self.b_up.shape != (d,):
            raise DataError("up projection must be D x 128 with a D-d bias")

    @property
    def m_count(self):
        return self.patterns.shape[0]

    @property
    def d_model(self):
        return self.w_down.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("patterns", "w_down", "b_down", "w_up", "b_up")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RetrievalResult:
    """indices / scores / weights, each B x L x K."""
    indices: np.ndarray
    scores: np.ndarray
    weights: np.ndarray


# ---------------------------------------------------------------------------
# Glyph correction
# ---------------------------------------------------------------------------

TOKEN_CJK = "cjk_char"
TOKEN_WORD = "ascii_word"
TOKEN_OTHER = "other"


@dataclass(frozen=True)
class Token:
    kind: str
    surface: str
    # UTF-8 byte offsets [start, end) into the original string
    span: tuple


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple

    def reconstruct(self):
        return "".join(tok.surface for tok in self.tokens)

    def surfaces(self):
        return [tok.surface for tok in self.tokens]

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class GlyphDatabase:
    """entries: token -> tuple of candidates. ASCII word keys are lowercase."""
    entries: dict
    max_candidates: int = 10

    def get(self, key, default=()):
        return self.entries.get(key, default)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries


@dataclass(frozen=True)
class PromptTemplate:
    id: int = 3

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise ConfigError(f"prompt template must be 1, 2 or 3, got {self.id}")


@dataclass(frozen=True)
class TokenDecision:
    position: int
    surface: str
    candidates: tuple
    chosen: str
    # (token, log-score) pairs, original first
    scores: tuple = ()

    @property
    def changed(self):
        return self.chosen != self.surface


@dataclass(frozen=True)
class CorrectionReport:
    original: str
    corrected: str
    decisions: tuple = ()
    prompt_used: Optional[str] = None

    @property
    def n_replacements(self):
        return sum(1 for d in self.decisions if d.changed)

    def to_dict(self):
        return {
            "original": self.original,
            "corrected": self.corrected,
            "prompt_used": self.prompt_used,
            "decisions": [
                {
                    "position": d.position,
                    "surface": d.surface,
                    "candidates": list(d.candidates),
                    "chosen": d.chosen,
                    "scores": [[tok, score] for tok, score in d.scores],
                }
                for d in self.decisions
            ],
        }


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BleuReport:
    bleu: tuple
    brevity_penalty: float
    precisions: tuple
    hyp_len: int
    ref_len: int

    def to_dict(self):
        return {
            "bleu_1": self.bleu[0],
            "bleu_2": self.bleu[1],
            "bleu_3": self.bleu[2],
            "bleu_4": self.bleu[3],
            "brevity_penalty": self.brevity_penalty,
            "precisions": list(self.precisions),
            "hyp_len": self.hyp_len,
            "ref_len": self.ref_len,
        }


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    val: tuple
    test: tuple


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    id: str
    events: str
    label: str


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    base_dir: str = "."

    def __len__(self):
        return len(self.records)


BACKEND_KINDS = ("oracle_with_noise", "external_http", "echo", "identity")


@dataclass(frozen=True)
class RecognizerBackend:
    kind: str
    noise_rate: float = 0.0
    seed: int = 0
    endpoint: Optional[str] = None
    timeout_ms: int = 30000

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError(f"noise rate must be in [0, 1], got {self.noise_rate}")
        if (self.kind == "external_http") != bool(self.endpoint):
            raise ConfigError("an endpoint URL is required for external_http and only for it")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout_ms} ms")


@dataclass(frozen=True)
class BenchConfig:
    t_count: int = 19
    k: int = 64
    template: int = 3
    max_candidates: int = 10
    margin: float = 0.0
    seed: int = 0
    m_count: int = 256
    noise_rate: float = 0.2
    max_concurrency: int = 4
    timeout_ms: int = 30000
    endpoint: Optional[str] = None


# ---------------------------------------------------------------------------
# JSONL records
# ---------------------------------------------------------------------------

def parse_jsonl(text, required=("id", "text")):
    """Parse JSONL text into a list of dicts, checking required keys per line."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"invalid JSON on line {lineno}: {e.msg}") from e
        if not isinstance(obj, dict):
            raise DataError(f"line {lineno} is not a JSON object")
        missing = [k for k in required if k not in obj]
        if missing:
            raise DataError(f"line {lineno} is missing {', '.join(missing)}")
        out.append(obj)
    return out


def serialize_jsonl(records):
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
