"""
Recognizer backends. The recognizer itself is treated as an opaque
text-in/text-out service: a noisy oracle stands in for it offline, and an
external HTTP endpoint can take correction prompts.

External protocol: POST {"prompt": string} -> {"text": string}, UTF-8 JSON.
"""
from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor

import requests

from models import ConfigError, RecognizerBackend, TransportError
from glyph_utils import lookup, tokenize

logger = logging.getLogger(__name__)

DEFAULT_MAX_CONCURRENCY = 4


def encode_request(prompt):
    """Canonical request body: compact separators, UTF-8, no ASCII escaping."""
    return json.dumps({"prompt": prompt}, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def call_external(backend, prompt, session=None):
    if backend.kind != "external_http":
        raise ConfigError(f"call_external needs an external_http backend, got {backend.kind}")
    endpoint = backend.endpoint
    post = session.post if session is not None else requests.post
    try:
        res = post(
            endpoint,
            data=encode_request(prompt),
            headers={"Content-Type": "application/json; charset=utf-8", "Accept": "application/json"},
            timeout=backend.timeout_ms / 1000.0,
        )
    except requests.exceptions.Timeout as e:
        raise TransportError(f"timeout after {backend.timeout_ms} ms calling {endpoint}", endpoint) from e
    except requests.exceptions.RequestException as e:
        raise TransportError(f"cannot reach {endpoint}: {e}", endpoint) from e

    if not 200 <= res.status_code < 300:
        raise TransportError(f"{endpoint} answered HTTP {res.status_code}", endpoint, res.status_code)
    try:
        body = json.loads(res.content.decode("utf-8"))
        text = body["text"]
    except (ValueError, TypeError, KeyError) as e:
        raise TransportError(f"malformed response body from {endpoint}", endpoint, res.status_code) from e
    if not isinstance(text, str):
        raise TransportError(f"'text' in response from {endpoint} is not a string", endpoint, res.status_code)
    return text


class EchoBackend:
    """Returns the prompt unchanged."""

    def complete(self, prompt, text):
        return prompt


class IdentityBackend:
    """Returns the text being corrected, ignoring the prompt."""

    def complete(self, prompt, text):
        return text


class HttpBackend:
    def __init__(self, spec, session=None):
        self.spec = spec
        self.session = session or requests.Session()

    def complete(self, prompt, text):
        return call_external(self.spec, prompt, session=self.session)


def make_backend(spec, session=None):
    if spec.kind == "echo":
        return EchoBackend()
    if spec.kind == "identity":
        return IdentityBackend()
    if spec.kind == "external_http":
        return HttpBackend(spec, session=session)
    raise ConfigError(f"backend kind {spec.kind} does not complete prompts")


def map_bounded(func, items, max_concurrency=DEFAULT_MAX_CONCURRENCY):
    """Apply func across items with at most max_concurrency in flight; results keep input order."""
    items = list(items)
    if max_concurrency <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# Stub recognizer
# ---------------------------------------------------------------------------

def inject_noise(text, db, rate, rng):
    """
    Substitute each token that has candidates with probability rate, choosing
    uniformly among its candidates. Returns (noisy text, [(position, true, substituted)]).
    """
    tokens = list(tokenize(text).tokens)
    out = []
    subs = []
    for i, tok in enumerate(tokens):
        cands = lookup(tok, db)
        if cands and rng.random() < rate:
            choice = rng.choice(cands)
            subs.append((i, tok.surface, choice))
            out.append(choice)
        else:
            out.append(tok.surface)
    return "".join(out), subs


def run_stub_recognizer(manifest, backend, db):
    """Noisy-oracle predictions {"id", "text"} for every manifest record, in manifest order."""
    if backend.kind != "oracle_with_noise":
        raise ConfigError(f"the stub recognizer needs an oracle_with_noise backend, got {backend.kind}")
    rng = random.Random(backend.seed)
    preds = []
    n_subs = 0
    for rec in manifest.records:
        text, subs = inject_noise(rec.label, db, backend.noise_rate, rng)
        n_subs += len(subs)
        preds.append({"id": rec.id, "text": text})
    logger.info("stub recognizer: %d records, %d substitutions at rate %.3f", len(preds), n_subs, backend.noise_rate)
    return preds


def backend_from_config(cfg, kind=None):
    """RecognizerBackend from a BenchConfig; external_http when an endpoint is configured."""
    if kind is None:
        kind = "external_http" if cfg.endpoint else "oracle_with_noise"
    return RecognizerBackend(
        kind=kind,
        noise_rate=cfg.noise_rate,
        seed=cfg.seed,
        endpoint=cfg.endpoint if kind == "external_http" else None,
        timeout_ms=cfg.timeout_ms,
    )
