"""
estr - event-stream scene text recognition toolkit.

Subcommands: stats, simulate, stack, split, correct, score, memtest, bench, synth.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 transport error.
"""
from __future__ import annotations

import json
import logging
import os
import sys

import click
import numpy as np

from models import (
    DataError,
    RecognizerBackend,
    SimulatorConfig,
    TransportError,
    IntensitySequence,
    parse_jsonl,
    serialize_jsonl,
)
from backend_utils import make_backend, map_bounded
from bench_utils import (
    bench as run_bench,
    dump_report,
    export_xlsx,
    load_manifest,
    manifest_stats,
    synthesize_fixtures,
    write_predictions,
)
from config_utils import load_config, load_env
from event_utils import FORMATS, compute_stats, read_events, write_events
from frame_utils import export_stack, read_luma, stack as stack_events, window_counts
from glyph_utils import correct as correct_text, correct_via_llm, read_database, read_scorer
from memory_utils import finite_difference_check, init_bank, run_oracle_suite
from metrics_utils import cjk_word_accuracy, corpus_bleu, mean_sentence_bleu, split_dataset, word_accuracy
from simulator_utils import DEFAULT_FRAME_INTERVAL_US, simulate as simulate_events

logger = logging.getLogger("estr")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _write_or_echo(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        click.echo(text, nl=False)


def _echo_json(obj):
    click.echo(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True))


def _int_list(value):
    if not value:
        return ()
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from e


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose):
    """Event-stream scene text recognition toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(FORMATS), default=None, help="Override extension-based detection.")
@click.option("--width", type=int, default=None, help="Sensor width (CSV input).")
@click.option("--height", type=int, default=None, help="Sensor height (CSV input).")
def stats(path, fmt, width, height):
    """Summarise an event file, or every record of a manifest (.jsonl)."""
    if path.endswith(".jsonl"):
        _echo_json(manifest_stats(load_manifest(path)))
        return
    stream = read_events(path, fmt, width, height)
    out = compute_stats(stream).to_dict()
    out["width"] = stream.width
    out["height"] = stream.height
    out["resorted"] = stream.diagnostics.resorted
    _echo_json(out)


@cli.command()
@click.argument("frames", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--threshold", type=float, default=0.2, show_default=True, help="Contrast threshold C.")
@click.option("--eps", type=float, default=1e-3, show_default=True, help="Log epsilon.")
@click.option("--interval-us", type=int, default=DEFAULT_FRAME_INTERVAL_US, show_default=True,
              help="Microseconds between input frames.")
def simulate(frames, out, threshold, eps, interval_us):
    """Synthesize events from P5/P6 frames into an evs1 or CSV file."""
    images = [read_luma(p) for p in frames]
    seq = IntensitySequence(images, tuple(i * interval_us for i in range(len(images))))
    stream = simulate_events(seq, SimulatorConfig(threshold, eps))
    write_events(stream, out)
    click.echo(f"{len(stream)} events -> {out}")


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--t", "t_count", type=int, default=19, show_default=True, help="Number of frames.")
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
def stack(path, outdir, t_count, width, height):
    """Stack an event file into T polarity frames written as P6 pixmaps."""
    stream = read_events(path, None, width, height)
    fstack = stack_events(stream, t_count)
    paths = export_stack(fstack, outdir)
    counts = window_counts(stream, fstack)
    for path_out, bounds, n in zip(paths, fstack.window_bounds, counts):
        click.echo(f"{path_out}\t[{bounds[0]}, {bounds[1]}]\t{n} events")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def split(manifest, outdir, seed):
    """Split JSONL records 7:1:2 into train/val/test files."""
    rows = parse_jsonl(_read_text(manifest), required=("id",))
    by_id = {str(r["id"]): r for r in rows}
    assignment = split_dataset([str(r["id"]) for r in rows], seed)
    os.makedirs(outdir, exist_ok=True)
    for name in ("train", "val", "test"):
        ids = getattr(assignment, name)
        with open(os.path.join(outdir, f"{name}.jsonl"), "w", encoding="utf-8") as f:
            f.write(serialize_jsonl(by_id[i] for i in ids))
        click.echo(f"{name}: {len(ids)}")


@cli.command()
@click.argument("pred", type=click.Path(exists=True, dir_okay=False))
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Glyph TSV.")
@click.option("--scorer", "scorer_path", type=click.Path(exists=True, dir_okay=False),
              help="Corpus (one sentence per line) for the bigram scorer.")
@click.option("--template", type=click.IntRange(1, 3), default=None, help="Prompt template (default 3).")
@click.option("--margin", type=click.FloatRange(min=0), default=None, help="Acceptance margin (default 0).")
@click.option("--max-candidates", type=click.IntRange(min=0), default=None, help="Candidate cap (default 10).")
@click.option("--backend", type=click.Choice(["bigram", "http", "echo", "identity"]), default="bigram",
              show_default=True, help="Local bigram scorer or a prompt backend.")
@click.option("--endpoint", default=None, help="Recognizer URL for --backend http.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def correct(pred, db_path, scorer_path, template, margin, max_candidates, backend, endpoint, config_path, out):
    """Correct JSONL predictions {"id","text"} -> {"id","text","corrected"}."""
    cfg = load_config(config_path, {
        "template": template, "margin": margin, "max_candidates": max_candidates, "endpoint": endpoint,
    })
    db = read_database(db_path, cfg.max_candidates)
    rows = parse_jsonl(_read_text(pred))

    if backend == "bigram":
        if not scorer_path:
            raise click.UsageError("--scorer is required with the bigram backend")
        scorer = read_scorer(scorer_path)
        fixed = [correct_text(r["text"], db, scorer, cfg.margin).corrected for r in rows]
    else:
        kind = "external_http" if backend == "http" else backend
        if kind == "external_http" and not cfg.endpoint:
            raise click.UsageError("--endpoint (or ESTR_ENDPOINT) is required with --backend http")
        spec = RecognizerBackend(kind, endpoint=cfg.endpoint if kind == "external_http" else None,
                                 timeout_ms=cfg.timeout_ms)
        impl = make_backend(spec)
        fixed = map_bounded(
            lambda r: correct_via_llm(r["text"], db, cfg.template, impl).corrected,
            rows,
            cfg.max_concurrency,
        )

    out_rows = [{"id": r["id"], "text": r["text"], "corrected": c} for r, c in zip(rows, fixed)]
    _write_or_echo(serialize_jsonl(out_rows), out)


@cli.command()
@click.option("--metric", type=click.Choice(["bleu", "acc", "acc-cjk"]), required=True)
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--field", default="text", show_default=True, help="Prediction field to score (e.g. corrected).")
def score(metric, pred_path, gt_path, field):
    """Score predictions against ground truth, matched by id."""
    preds = parse_jsonl(_read_text(pred_path), required=("id", field))
    gts = {str(r["id"]): r for r in parse_jsonl(_read_text(gt_path), required=("id",))}
    pairs = []
    for p in preds:
        gt = gts.get(str(p["id"]))
        if gt is None:
            raise DataError(f"prediction id {p['id']!r} has no ground truth")
        ref = gt.get("text", gt.get("label"))
        if ref is None:
            raise DataError(f"ground truth {p['id']!r} has neither 'text' nor 'label'")
        pairs.append((p[field], ref))

    if metric == "acc":
        _echo_json({"metric": "acc", "n": len(pairs), "word_accuracy": word_accuracy(pairs)})
        return
    if metric == "acc-cjk":
        _echo_json({"metric": "acc-cjk", "n": len(pairs), "word_accuracy": cjk_word_accuracy(pairs)})
        return
    corpus = corpus_bleu(pairs)
    _echo_json({
        "metric": "bleu",
        "n": len(pairs),
        "corpus": corpus.to_dict(),
        "sentence_mean": dict(zip(("bleu_1", "bleu_2", "bleu_3", "bleu_4"), mean_sentence_bleu(pairs))),
    })


@cli.command()
@click.option("--cases", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def memtest(cases, seed):
    """Run the memory kernel oracle suite."""
    result = run_oracle_suite(n_cases=cases, seed=seed)
    rng = np.random.default_rng(seed)
    bank = init_bank(8, 16, seed)
    result["finite_difference_error"] = finite_difference_check(rng.standard_normal((2, 3, 8)), bank, k=4)
    _echo_json(result)
    if not result["passed"]:
        raise DataError("memory kernel oracle suite failed")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scorer", "scorer_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--t", "t_count", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--m-count", type=int, default=None)
@click.option("--template", type=int, default=None)
@click.option("--max-candidates", type=int, default=None)
@click.option("--margin", type=float, default=None)
@click.option("--noise-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--endpoint", default=None)
@click.option("--max-concurrency", type=int, default=None)
@click.option("--timeout-ms", type=int, default=None)
@click.option("--sweep-candidates", default=None, help="e.g. 5,7,10,12")
@click.option("--sweep-k", default=None, help="e.g. 3,32,64,128")
@click.option("--out", "outdir", type=click.Path(file_okay=False), default=None,
              help="Write report.json and per-arm predictions here.")
@click.option("--xlsx", type=click.Path(dir_okay=False), default=None)
def bench(manifest_path, db_path, scorer_path, config_path, outdir, xlsx, sweep_candidates, sweep_k, **flags):
    """Four-arm ablation (baseline, +GECM, +MM, +GECM+MM) on a manifest."""
    cfg = load_config(config_path, flags)
    manifest = load_manifest(manifest_path)
    sweep_candidates = _int_list(sweep_candidates)
    db = read_database(db_path, max([cfg.max_candidates, *sweep_candidates]))
    scorer = read_scorer(scorer_path)
    report, predictions = run_bench(
        manifest, cfg, db, scorer,
        sweep_candidates=sweep_candidates,
        sweep_k=_int_list(sweep_k),
    )
    text = dump_report(report)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as f:
            f.write(text)
        write_predictions(predictions, outdir)
    if xlsx:
        export_xlsx(report, xlsx)
    click.echo(text, nl=False)


@cli.command()
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--frames", "n_frames", type=click.IntRange(min=2), default=5, show_default=True)
@click.option("--threshold", type=float, default=0.2, show_default=True)
def synth(corpus, outdir, n_frames, threshold):
    """Render corpus lines as moving text and simulate an event dataset."""
    lines = [line.strip() for line in _read_text(corpus).splitlines() if line.strip()]
    if not lines:
        raise DataError(f"{corpus} has no non-empty lines")
    path = synthesize_fixtures(lines, outdir, n_frames, SimulatorConfig(threshold))
    click.echo(path)


def main(argv=None):
    load_env()
    try:
        rv = cli.main(args=argv, prog_name="estr", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("Aborted.", err=True)
        return EXIT_USAGE
    except TransportError as e:
        click.echo(f"transport error: {e}", err=True)
        return EXIT_TRANSPORT
    except DataError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_DATA
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_DATA
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
