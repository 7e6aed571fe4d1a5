"""
Dataset manifests, synthetic fixture generation and the four-arm ablation
bench (baseline, +GECM, +MM, +both).

The memory stage runs on stacked-frame feature proxies and is metric-neutral:
without a visual encoder its effect on recognition is undefined, so the bench
records only shapes for it. Latency goes to the log, keeping reports
byte-identical across runs.
"""
from __future__ import annotations

import json
import logging
import os

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Font

from models import DatasetManifest, ManifestError, ManifestRecord, SimulatorConfig, parse_jsonl, serialize_jsonl
from backend_utils import backend_from_config, make_backend, map_bounded, run_stub_recognizer
from event_utils import compute_stats, read_events, write_events
from frame_utils import representative_frame, stack
from glyph_utils import cap_database, correct, correct_via_llm
from memory_utils import frame_features, init_bank, timed_enhance
from metrics_utils import corpus_bleu
from simulator_utils import render_text_sequence, simulate

logger = logging.getLogger(__name__)

ARMS = (
    ("baseline", False, False),
    ("+GECM", True, False),
    ("+MM", False, True),
    ("+GECM+MM", True, True),
)
ARM_FILES = {
    "baseline": "pred_baseline.jsonl",
    "+GECM": "pred_gecm.jsonl",
    "+MM": "pred_mm.jsonl",
    "+GECM+MM": "pred_gecm_mm.jsonl",
}


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def parse_manifest(text, base_dir=".", check_files=True):
    try:
        rows = parse_jsonl(text, required=("id", "events", "label"))
    except ValueError as e:
        raise ManifestError(f"manifest: {e}") from e
    seen = set()
    records = []
    for row in rows:
        rid = str(row["id"])
        if rid in seen:
            raise ManifestError(f"duplicate manifest id {rid!r}")
        seen.add(rid)
        path = os.path.join(base_dir, row["events"])
        if check_files and not os.path.isfile(path):
            raise ManifestError(f"events file for {rid!r} not found: {path}")
        records.append(ManifestRecord(rid, row["events"], str(row["label"])))
    return DatasetManifest(tuple(records), base_dir)


def load_manifest(path, check_files=True):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    return parse_manifest(text, os.path.dirname(os.path.abspath(path)), check_files)


def manifest_events_path(manifest, record):
    return os.path.join(manifest.base_dir, record.events)


def manifest_stats(manifest):
    """Dataset-level summary: resolutions, event counts and label lengths."""
    resolutions = {}
    counts = []
    for rec in manifest.records:
        stream = read_events(manifest_events_path(manifest, rec))
        key = f"{stream.width}x{stream.height}"
        resolutions[key] = resolutions.get(key, 0) + 1
        counts.append(compute_stats(stream).n_events)
    return {
        "records": len(manifest),
        "resolutions": dict(sorted(resolutions.items())),
        "events_total": int(sum(counts)),
        "events_mean": float(np.mean(counts)) if counts else 0.0,
        "events_max": int(max(counts)) if counts else 0,
        "label_chars_mean": float(np.mean([len(r.label) for r in manifest.records])) if counts else 0.0,
    }


def synthesize_fixtures(lines, outdir, n_frames=5, sim_cfg=None, prefix="rec"):
    """
    Render each line as moving text, simulate its events, and write evs1 files
    plus manifest.jsonl into outdir. Returns the manifest path.
    """
    sim_cfg = sim_cfg or SimulatorConfig()
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for i, label in enumerate(lines):
        rid = f"{prefix}_{i:05d}"
        stream = simulate(render_text_sequence(label, n_frames=n_frames), sim_cfg)
        fname = f"{rid}.evs1"
        write_events(stream, os.path.join(outdir, fname))
        rows.append({"id": rid, "events": fname, "label": label})
    path = os.path.join(outdir, "manifest.jsonl")
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_jsonl(rows))
    logger.info("wrote %d synthetic records to %s", len(rows), outdir)
    return path


# ---------------------------------------------------------------------------
# Bench
# ---------------------------------------------------------------------------

def _gecm(preds, db, scorer, cfg, backend=None):
    if backend is None:
        return [{"id": p["id"], "text": correct(p["text"], db, scorer, cfg.margin).corrected} for p in preds]

    def one(p):
        report = correct_via_llm(p["text"], db, cfg.template, backend)
        return {"id": p["id"], "text": report.corrected}

    return map_bounded(one, preds, cfg.max_concurrency)


def memory_stage(manifest, cfg, k=None):
    """Stack, featurise and memory-enhance every record; returns shape facts."""
    k = cfg.k if k is None else k
    bank = None
    in_shape = out_shape = None
    preserved = True
    total_time = 0.0
    for rec in manifest.records:
        stream = read_events(manifest_events_path(manifest, rec))
        feats = frame_features(representative_frame(stack(stream, cfg.t_count)))
        if bank is None:
            bank = init_bank(feats.shape[2], cfg.m_count, cfg.seed)
        out, elapsed = timed_enhance(feats, bank, k)
        total_time += elapsed
        preserved = preserved and out.shape == feats.shape
        in_shape, out_shape = list(feats.shape), list(out.shape)
    logger.info("memory stage K=%d over %d records: %.3fs", k, len(manifest), total_time)
    return {
        "k": k,
        "m_count": cfg.m_count,
        "t_count": cfg.t_count,
        "records": len(manifest),
        "feature_shape": in_shape,
        "output_shape": out_shape,
        "shape_preserved": preserved,
    }


def _scores(preds, labels):
    report = corpus_bleu([(p["text"], labels[p["id"]]) for p in preds])
    return list(report.bleu)


def bench(manifest, cfg, db, scorer, sweep_candidates=(), sweep_k=(), session=None):
    """
    Returns (report, predictions_by_arm). BLEU is corpus-pooled. With an
    endpoint configured the GECM arms go through the prompt backend instead of
    the local scorer.
    """
    if not len(manifest):
        raise ManifestError("bench needs a manifest with at least one record")
    labels = {r.id: r.label for r in manifest.records}
    # sweeps cap from the database as given, not from the configured cap
    full_db = db
    db = cap_database(full_db, cfg.max_candidates)

    stub = backend_from_config(cfg, kind="oracle_with_noise")
    baseline = run_stub_recognizer(manifest, stub, db)
    llm = make_backend(backend_from_config(cfg), session=session) if cfg.endpoint else None
    corrected = _gecm(baseline, db, scorer, cfg, llm)
    mem = memory_stage(manifest, cfg)

    predictions = {}
    arms = []
    base_scores = _scores(baseline, labels)
    for name, use_gecm, use_mm in ARMS:
        preds = corrected if use_gecm else baseline
        predictions[name] = preds
        scores = _scores(preds, labels)
        arms.append({
            "arm": name,
            "gecm": use_gecm,
            "mm": use_mm,
            "bleu": scores,
            "delta": [s - b for s, b in zip(scores, base_scores)],
        })

    report = {
        "aggregation": "corpus",
        "config": {
            "t_count": cfg.t_count,
            "k": cfg.k,
            "template": cfg.template,
            "max_candidates": cfg.max_candidates,
            "margin": cfg.margin,
            "seed": cfg.seed,
            "m_count": cfg.m_count,
            "noise_rate": cfg.noise_rate,
            "gecm_backend": "external_http" if llm else "bigram",
        },
        "records": len(manifest),
        "arms": arms,
        "memory_stage": mem,
    }

    if sweep_candidates:
        report["candidate_sweep"] = []
        for cap in sweep_candidates:
            capped = cap_database(full_db, cap)
            preds = _gecm(baseline, capped, scorer, cfg, llm)
            report["candidate_sweep"].append({"max_candidates": cap, "bleu": _scores(preds, labels)})
    if sweep_k:
        report["k_sweep"] = [memory_stage(manifest, cfg, k) for k in sweep_k]
    return report, predictions


def dump_report(report):
    return json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def write_predictions(predictions, outdir):
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    for arm, preds in predictions.items():
        path = os.path.join(outdir, ARM_FILES[arm])
        with open(path, "w", encoding="utf-8") as f:
            f.write(serialize_jsonl(preds))
        paths[arm] = path
    return paths


def export_xlsx(report, path):
    """Ablation table (and sweeps, when present) as a spreadsheet."""
    wb = Workbook()
    ws = wb.active
    ws.title = "ablation"
    header = ["Arm", "GECM", "MM", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4",
              "dBLEU-1", "dBLEU-2", "dBLEU-3", "dBLEU-4"]
    ws.append(header)
    for cell in ws[1]:
        cell.font = Font(bold=True)
    for arm in report["arms"]:
        ws.append([arm["arm"], arm["gecm"], arm["mm"], *arm["bleu"], *arm["delta"]])

    if "candidate_sweep" in report:
        sw = wb.create_sheet("candidates")
        sw.append(["Candidates", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4"])
        for row in report["candidate_sweep"]:
            sw.append([row["max_candidates"], *row["bleu"]])
    if "k_sweep" in report:
        sk = wb.create_sheet("top_k")
        sk.append(["K", "Records", "Shape preserved"])
        for row in report["k_sweep"]:
            sk.append([row["k"], row["records"], row["shape_preserved"]])
    wb.save(path)
    return path
