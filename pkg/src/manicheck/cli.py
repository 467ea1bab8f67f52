"""Command-line entry points for detection, evaluation, and dataset workflows."""
from __future__ import annotations

import functools
import json
import shutil
import sys
from pathlib import Path

import click

from . import dataset as ds
from .config import merge_settings, pipeline_config_from_settings
from .evaluation import (
    BenchmarkAdapterConfig,
    CollapseScheme,
    ConfusionMatrix,
    compute_metrics,
    evaluate_dataset,
    load_benchmark,
    run_benchmark,
)
from .inference import ScriptedLLMProvider
from .models import dump_claims, load_claims, validate_claim_record
from .pipeline import Mode, build_providers, detect


def operational(fn):
    """Map operational failures to exit status 1 with a message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


_provider_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="Flat key=value config file."),
    click.option("--search-fixture", default=None, help="Mock search fixture JSON."),
    click.option("--pages-dir", default=None, help="Offline page fixtures (with pages.json)."),
    click.option("--llm-script", default=None, help="Scripted LLM transcript JSON."),
    click.option("--search-mode", default=None, type=click.Choice(["mock", "live"])),
    click.option("--embed-mode", default=None, type=click.Choice(["mock16", "live"])),
    click.option("--llm-mode", default=None, type=click.Choice(["scripted", "live"])),
    click.option("--cache-dir", default=None, help="Fetch cache directory."),
    click.option("--no-fetch", is_flag=True, default=False, help="Serve pages from cache only."),
]


def provider_options(fn):
    for option in reversed(_provider_options):
        fn = option(fn)
    return fn


def _settings(config_path, **flags):
    return merge_settings(
        {
            "search.fixture": flags.get("search_fixture"),
            "pages.dir": flags.get("pages_dir"),
            "llm.script": flags.get("llm_script"),
            "search.mode": flags.get("search_mode"),
            "embed.mode": flags.get("embed_mode"),
            "llm.mode": flags.get("llm_mode"),
            "cache.dir": flags.get("cache_dir"),
            "no_fetch": "true" if flags.get("no_fetch") else None,
            "k_documents": flags.get("k"),
            "retrieved_chunks": flags.get("chunks"),
            "runs": flags.get("runs"),
            "temperature": flags.get("temperature"),
            "parallel": flags.get("parallel"),
            "mode": "ablation" if flags.get("no_retrieval") else None,
            "template_path": flags.get("template"),
        },
        config_path,
    )


@click.group()
def main():
    """Retrieval-augmented manipulated-content detector."""


@main.command("detect")
@click.argument("claim")
@click.option("--k", type=int, default=None, help="Documents to retrieve (default 3).")
@click.option("--chunks", type=int, default=None, help="Chunks to augment (default 5).")
@click.option("--runs", type=int, default=None, help="Inference repetitions (default 3).")
@click.option("--temperature", type=float, default=None, help="LLM temperature (default 0.1).")
@click.option("--no-retrieval", is_flag=True, help="Skip retrieval (ablation mode).")
@click.option("--region", default=None, help="Search locale for the claim.")
@click.option("--date", "date_str", default=None, help="Claim date (YYYY-MM-DD), recorded only.")
@click.option("--template", default=None, help="Prompt template file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@provider_options
@operational
def detect_cmd(claim, config_path, as_json, region, date_str, **flags):
    """Run the two-phase detection on one claim."""
    config = pipeline_config_from_settings(_settings(config_path, **flags))
    providers = build_providers(config.providers)
    prediction = detect(claim, config, providers, region=region)
    if as_json:
        payload = prediction.to_dict()
        payload["claim"] = claim
        if date_str:
            payload["date"] = date_str
        click.echo(json.dumps(payload, ensure_ascii=False))
    else:
        click.echo(f"claim: {claim}")
        click.echo(f"majority: {prediction.majority.value}")
        for i, verdict in enumerate(prediction.runs, 1):
            click.echo(f"run {i}: {verdict.label.value}")
        if prediction.runs:
            click.echo(f"explanation: {prediction.runs[0].explanation}")
        for warning in prediction.warnings:
            click.echo(f"warning: {warning}", err=True)


def _run_eval(dataset_path, out, config_path, as_json, **flags):
    config = pipeline_config_from_settings(_settings(config_path, **flags))
    providers = build_providers(config.providers)
    claims = load_claims(dataset_path)
    report = evaluate_dataset(claims, config, providers)
    report.save(out)
    if as_json:
        click.echo(json.dumps(report.to_dict(), ensure_ascii=False))
    else:
        m = report.metrics
        click.echo(f"scored {report.confusion.total} claims (mode={report.mode})")
        click.echo(f"confusion: {report.confusion.to_dict()}")
        click.echo(
            "precision={} recall={} f1={} accuracy={}".format(
                *(("n/a" if v is None else f"{v:.4f}")
                  for v in (m.precision, m.recall, m.f1, m.accuracy))
            )
        )
        click.echo(f"report written to {out}")


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, help="Dataset JSONL.")
@click.option("--out", required=True, help="Report JSON output path.")
@click.option("--no-retrieval", is_flag=True, help="Ablation protocol.")
@click.option("--parallel", type=int, default=None, help="Concurrent claims (default 4).")
@click.option("--json", "as_json", is_flag=True)
@provider_options
@operational
def eval_cmd(dataset_path, out, config_path, as_json, **flags):
    """Evaluate a dataset and write an evaluation report."""
    _run_eval(dataset_path, out, config_path, as_json, **flags)


@main.command("ablation")
@click.option("--dataset", "dataset_path", required=True, help="Dataset JSONL.")
@click.option("--out", required=True, help="Report JSON output path.")
@click.option("--parallel", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@provider_options
@operational
def ablation_cmd(dataset_path, out, config_path, as_json, **flags):
    """Evaluate with no retrieved context (no-retrieval ablation)."""
    flags["no_retrieval"] = True
    _run_eval(dataset_path, out, config_path, as_json, **flags)


@main.command("benchmark")
@click.option("--data", "data_path", required=True, help="Benchmark JSONL.")
@click.option("--scheme", type=click.Choice(["binary", "sixway", "threeway"]), default="binary")
@click.option("--evidence-mode", is_flag=True, help="Use dataset evidence instead of retrieval.")
@click.option("--out", required=True, help="Report JSON output path.")
@click.option("--parallel", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@provider_options
@operational
def benchmark_cmd(data_path, scheme, evidence_mode, out, config_path, as_json, **flags):
    """Evaluate an external fact-checking benchmark."""
    adapter = BenchmarkAdapterConfig(scheme=CollapseScheme(scheme), evidence_mode=evidence_mode)
    config = pipeline_config_from_settings(_settings(config_path, **flags))
    providers = build_providers(config.providers)
    items = load_benchmark(data_path, adapter)
    report = run_benchmark(items, config, providers, adapter)
    report.save(out)
    if as_json:
        click.echo(json.dumps(report.to_dict(), ensure_ascii=False))
    else:
        click.echo(f"scored {report.confusion.total} claims (mode={report.mode})")
        click.echo(f"metrics: {report.metrics.to_dict()}")
        click.echo(f"report written to {out}")


@main.group("dataset")
def dataset_group():
    """Dataset creation workflow: ingest, derive, review-export, assemble."""


@dataset_group.command("ingest")
@click.option("--manifest", required=True, type=click.Path(exists=True),
              help="JSON list of {path, provider, region} feed entries.")
@click.option("--out", required=True, help="Originals JSONL output.")
@operational
def dataset_ingest(manifest, out):
    """Read local feed XML files into original claim records."""
    feeds = json.loads(Path(manifest).read_text(encoding="utf-8"))
    records = []
    sequence = 0
    for feed in feeds:
        feed_bytes = Path(feed["path"]).read_bytes()
        for entry in ds.ingest_rss(feed_bytes, feed["provider"], feed["region"]):
            records.append(ds.entry_to_record(entry, sequence))
            sequence += 1
    dump_claims(records, out)
    click.echo(f"wrote {len(records)} original records to {out}")


@dataset_group.command("derive")
@click.option("--originals", "originals_path", required=True, type=click.Path(exists=True))
@click.option("--llm-script", required=True, help="Scripted LLM transcript JSON.")
@click.option("--out", required=True, help="Proposals JSONL output.")
@operational
def dataset_derive(originals_path, llm_script, out):
    """Filter claim-worthiness and propose negations and alteration targets."""
    provider = ScriptedLLMProvider(llm_script)
    originals = load_claims(originals_path)
    rows = []
    kept = 0
    for origin in originals:
        if not ds.filter_claimworthy(origin.headline, provider):
            continue
        kept += 1
        try:
            negation = ds.generate_negation(origin.headline, provider)
            rows.append(ds.negation_review_row(origin, negation))
        except ds.GenerationError as exc:
            click.echo(f"negation rejected for {origin.id}: {exc}", err=True)
        for item in ds.extract_key_context(origin.headline, provider):
            rows.append(ds.alteration_review_row(origin, item))
    ds.export_review_rows(rows, out)
    click.echo(f"kept {kept}/{len(originals)} claim-worthy originals; "
               f"wrote {len(rows)} proposals to {out}")


@dataset_group.command("review-export")
@click.option("--proposals", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, help="Review JSONL for human editing.")
@operational
def dataset_review_export(proposals, out):
    """Format proposals as a review file with approved/note fields."""
    rows = ds.load_review_rows(proposals)
    for row in rows:
        row.setdefault("approved", False)
        row.setdefault("note", "")
    ds.export_review_rows(rows, out)
    click.echo(f"wrote {len(rows)} review rows to {out}")


@dataset_group.command("assemble")
@click.option("--originals", "originals_path", required=True, type=click.Path(exists=True))
@click.option("--review", "review_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, help="Final dataset JSONL.")
@operational
def dataset_assemble(originals_path, review_path, out):
    """Assemble the labeled dataset from originals plus approved review rows."""
    originals = load_claims(originals_path)
    rows = ds.load_review_rows(review_path)
    negations, alterations = ds.records_from_review(originals, rows)
    records, counts = ds.assemble_dataset(originals, negations, alterations)
    for record in records:
        violations = validate_claim_record(record)
        if violations:
            raise ds.AssemblyError(f"{record.id}: {violations}")
    dump_claims(records, out)
    click.echo(f"wrote {len(records)} records to {out}")
    click.echo(f"counts: {json.dumps(counts)}")


@main.command("metrics")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
@operational
def metrics_cmd(report_path, as_json):
    """Recompute precision/recall/F1/accuracy from a report's confusion matrix."""
    data = json.loads(Path(report_path).read_text(encoding="utf-8"))
    cm = ConfusionMatrix(**data["confusion"])
    metrics = compute_metrics(cm)
    if as_json:
        click.echo(json.dumps({"confusion": cm.to_dict(), "metrics": metrics.to_dict()}))
    else:
        click.echo(f"confusion: {cm.to_dict()}")
        click.echo(f"metrics: {metrics.to_dict()}")


@main.group("cache")
def cache_group():
    """Fetch-cache maintenance."""


@cache_group.command("purge")
@click.option("--cache-dir", default=None, help="Cache directory (or MANICHECK_CACHE_DIR).")
@operational
def cache_purge(cache_dir):
    """Delete every cached page."""
    import os

    target = cache_dir or os.environ.get("MANICHECK_CACHE_DIR")
    if not target:
        raise click.ClickException("no cache directory configured")
    path = Path(target)
    removed = 0
    if path.exists():
        for entry in path.glob("*.json"):
            entry.unlink()
            removed += 1
    click.echo(f"removed {removed} cached pages from {path}")


if __name__ == "__main__":
    main()
