"""Command-line interface binding the pipelines together.

Config precedence: explicit flags > --config JSON file > built-in defaults.
API keys are only ever read from the environment.  Exit code 0 on success,
2 on validation errors.
"""

from __future__ import annotations

import functools
import json
import random
import sys
from pathlib import Path

import click

from . import casebank as cb
from . import masks as mk
from . import metrics as mt
from . import preference as pf
from . import retrieval as rt
from .clients import ChatCompletionsClient
from .engine import HttpDirector, ReplayScript, SessionConfig
from .errors import DxkitError
from .eventlog import EventLog
from .oracle import OracleAssistant
from .protocol import parse_transcript, transcript_from_dict, transcript_to_dict
from .service import ServiceConfig, SessionManager, create_app


def _fail_on_dxkit_error(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DxkitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _director_provider(replay: str | None, url: str | None, model: str | None, config: dict):
    url = url or config.get("director_url")
    model = model or config.get("director_model")
    if replay:
        script = ReplayScript.load(replay)
        return lambda case: script.director_for(case.case_id if case is not None else None)
    if url and model:
        director = HttpDirector.from_endpoint(url, model)
        return lambda case: director
    raise click.UsageError("need --replay or a director endpoint (--director-url + --model)")


def _load_transcript_rows(path: str) -> list[tuple[str, object]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if "text" in row:
                t = parse_transcript(row["text"])
            else:
                t = transcript_from_dict(row["transcript"])
            rows.append((row.get("case_id", ""), t))
    return rows


@click.group()
def main() -> None:
    """Diagnosis-session orchestration, dataset pipelines and evaluation."""


@main.command()
@click.option("--cases", "cases_path", required=True, type=click.Path(exists=True))
@click.option("--replay", type=click.Path(exists=True), help="JSONL of canned director outputs")
@click.option("--director-url", help="chat-completions endpoint for a live director")
@click.option("--model", help="model name at the director endpoint")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), help="write the report JSON here")
@click.option("--csv", "csv_out", type=click.Path(), help="write per-case rows as CSV")
@click.option("--breakdown-csv", "breakdown_out", type=click.Path(),
              help="write department/task aggregates as CSV")
@click.option("--compare", "compare_path", type=click.Path(exists=True),
              help="earlier report JSON; prints McNemar/Mann-Whitney significance")
@click.option("--step-cap", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True, help="bootstrap CI seed")
@_fail_on_dxkit_error
def run(cases_path, replay, director_url, model, config_path, out, csv_out,
        breakdown_out, compare_path, step_cap, seed):
    """Batch-evaluate a case bank and emit a metric report."""
    config = _load_config(config_path)
    bank = cb.ingest_cases(cases_path)
    provider = _director_provider(replay, director_url, model, config)
    report = mt.evaluate_casebank(
        bank,
        provider,
        OracleAssistant(),
        cfg=SessionConfig(step_cap=step_cap),
        ci_seed=seed,
    )
    payload = report.to_json() + "\n"
    if out:
        Path(out).write_text(payload, encoding="utf-8")
    else:
        click.echo(payload, nl=False)
    if csv_out:
        Path(csv_out).write_text(report.to_csv(), encoding="utf-8")
    if breakdown_out:
        Path(breakdown_out).write_text(report.breakdown_csv(), encoding="utf-8")
    if compare_path:
        previous = mt.report_from_dict(json.loads(Path(compare_path).read_text(encoding="utf-8")))
        click.echo(json.dumps(mt.compare_reports(report, previous), sort_keys=True))
    click.echo(
        f"cases={len(report.rows)} accuracy={report.accuracy:.4f} "
        f"ops_mean={report.op_count_mean:.4f} effectiveness={report.op_effectiveness_mean:.4f}",
        err=True,
    )


@main.command()
@click.option("--raw", "raw_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--store", "store_path", type=click.Path(), help="model-call cache (JSONL)")
@click.option("--judge-url", help="chat-completions endpoint for the transform judge")
@click.option("--judge-model")
@_fail_on_dxkit_error
def transform(raw_path, out, store_path, judge_url, judge_model):
    """Run the case transformation pipeline over raw QA records."""
    judge = ChatCompletionsClient(judge_url, judge_model) if judge_url and judge_model else None
    store = cb.TransformStore(store_path)
    records = []
    with open(raw_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(cb.transform_case(json.loads(line), judge, store))
    cb.write_cases(cb.CaseBank(cases=records), out)
    click.echo(f"transformed {len(records)} cases -> {out}", err=True)


@main.command("masks")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="JSONL rows {case_id, text | transcript}")
@click.option("--cases", "cases_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["reasoning", "knowledge", "both"]), default="both",
              show_default=True)
@click.option("--out", required=True, type=click.Path())
@_fail_on_dxkit_error
def masks_cmd(pairs_path, cases_path, mode, out):
    """Build loss-mask training samples from instruction-response pairs."""
    bank = cb.ingest_cases(cases_path)
    samples = []
    for case_id, transcript in _load_transcript_rows(pairs_path):
        case = bank.get(case_id)
        if case is None:
            raise cb.SchemaError(0, f"pair references unknown case {case_id!r}")
        pair = cb.InstructionResponsePair(instruction=transcript.instruction, response=transcript)
        modes = [mode] if mode != "both" else [mk.MODE_REASONING, mk.MODE_KNOWLEDGE]
        for m in modes:
            samples.append(mk.build_masks(pair, case.clinical_info, m))
    mk.write_masked_samples(samples, out)
    click.echo(f"wrote {len(samples)} masked samples -> {out}", err=True)


@main.command()
@click.option("--cases", "cases_path", required=True, type=click.Path(exists=True))
@click.option("--replay", type=click.Path(exists=True))
@click.option("--director-url")
@click.option("--model")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k", default=3, show_default=True, help="candidates sampled per step")
@click.option("--step-cap", default=20, show_default=True)
@click.option("--max-steps", default=None, type=int)
@_fail_on_dxkit_error
def prefdata(cases_path, replay, director_url, model, config_path, out, k, step_cap, max_steps):
    """Build the step-level preference-pair dataset."""
    config = _load_config(config_path)
    bank = cb.ingest_cases(cases_path)
    provider = _director_provider(replay, director_url, model, config)
    assistant = OracleAssistant()
    all_pairs = []
    for case in bank:
        all_pairs.extend(
            pf.build_preference_dataset(
                case,
                provider(case),
                assistant,
                k=k,
                cfg=SessionConfig(step_cap=step_cap),
                max_steps=max_steps,
            )
        )
    pf.write_preference_pairs(all_pairs, out)
    click.echo(f"wrote {len(all_pairs)} preference pairs -> {out}", err=True)


@main.group()
def index() -> None:
    """Manage the flat literature index."""


@index.command("add")
@click.option("--index", "index_base", required=True, type=click.Path())
@click.option("--paragraphs", "paragraphs_path", required=True, type=click.Path(exists=True))
@click.option("--dim", default=64, show_default=True)
@_fail_on_dxkit_error
def index_add_cmd(index_base, paragraphs_path, dim):
    """Embed and append paragraphs ({doc_id, source, text} JSONL)."""
    base = Path(index_base)
    idx = rt.FlatIndex.load(base) if base.with_suffix(".bin").exists() else rt.FlatIndex(dimension=dim)
    embedder = rt.HashEmbedder(dimension=idx.dimension)
    with open(paragraphs_path, encoding="utf-8") as fh:
        paragraphs = [json.loads(line) for line in fh if line.strip()]
    rt.index_add(idx, paragraphs, embedder)
    idx.save(base)
    click.echo(f"index now holds {len(idx)} paragraphs", err=True)


@index.command("query")
@click.option("--index", "index_base", required=True, type=click.Path())
@click.option("--query", "query_text", required=True)
@click.option("--k", default=5, show_default=True)
@_fail_on_dxkit_error
def index_query_cmd(index_base, query_text, k):
    """Exact top-k search against a stored index."""
    idx = rt.FlatIndex.load(Path(index_base))
    embedder = rt.HashEmbedder(dimension=idx.dimension)
    for doc_id, score in rt.search_topk(idx, query_text, k, embedder):
        click.echo(json.dumps({"doc_id": doc_id, "score": score}))


@main.command()
@click.option("--transcripts", "transcripts_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@_fail_on_dxkit_error
def perturb(transcripts_path, out, seed):
    """Build the accountability dataset: perturbed transcripts with labels."""
    rng = random.Random(seed)
    targets = [mt.AttributionLabel.LLM, mt.AttributionLabel.PHYSICIAN, mt.AttributionLabel.BOTH]
    written = 0
    with open(out, "w", encoding="utf-8") as fh:
        for i, (case_id, transcript) in enumerate(_load_transcript_rows(transcripts_path)):
            target = targets[i % len(targets)]
            step = rng.randint(1, transcript.n_steps)
            try:
                record = mt.perturb_step(transcript, step, target)
            except mt.NoPhysicianStep:
                click.echo(f"skipping {case_id}: no physician step for {target.value}", err=True)
                continue
            fh.write(
                json.dumps(
                    {
                        "case_id": case_id,
                        "label": record.label.value,
                        "transcript": transcript_to_dict(record.transcript),
                        "mutations": [
                            {"step": m.step, "part": m.part, "before": m.before, "after": m.after}
                            for m in record.mutations
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            written += 1
    click.echo(f"wrote {written} perturbed transcripts -> {out}", err=True)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--cases", "cases_path", type=click.Path(exists=True))
@click.option("--replay", type=click.Path(exists=True))
@click.option("--director-url")
@click.option("--model")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--log-dir", default="./session-logs", show_default=True)
@click.option("--step-cap", default=20, show_default=True)
@click.option("--auto-assist", is_flag=True, help="answer physician questions from case data")
@click.option("--test-mode", is_flag=True, help="short (5s) awaiting-physician timeout")
@_fail_on_dxkit_error
def serve(host, port, cases_path, replay, director_url, model, config_path, log_dir,
          step_cap, auto_assist, test_mode):
    """Run the HTTP service for live sessions and the operator console."""
    import uvicorn

    config = _load_config(config_path)
    bank = cb.ingest_cases(cases_path) if cases_path else None
    provider = _director_provider(replay, director_url, model, config)
    cfg = ServiceConfig(
        step_cap=step_cap,
        await_timeout=5.0 if test_mode else 24 * 3600.0,
        auto_assist=auto_assist,
    )
    manager = SessionManager(provider, cfg=cfg, casebank=bank, log=EventLog(log_dir))
    uvicorn.run(create_app(manager), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
