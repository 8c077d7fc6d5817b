"""Command-line entry point wiring all modules together.

Exit codes: 0 success, 1 domain error (invalid plan, failed eval load,
model/transport failure), 2 usage error. Credentials stay in the
environment; everything else is a flag so invocations are reproducible.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .datasets import DatasetError, load_golden_dataset
from .enforcer import compile_schema, enforced_repair
from .executor import StubRuntime, execute, register_operator_tools
from .llm import CompletionError, RemoteChatModel, load_replay
from .metrics import EvalRecord, evaluate_dataset, render_csv, render_table
from .pipelines import (
    PipelineConfig,
    PipelineError,
    PlannerContext,
    PromptError,
    run_enchant,
    run_regains,
)
from .plan import parse_plan, serialize_plan, validate_refs
from .registry import RegistryError, fixture_tools_path, load_registry, validate_registry
from .retrieval import (
    HashEmbeddingProvider,
    RemoteEmbeddingProvider,
    RetrievalError,
    index_corpus,
    save_corpus,
    tool_embedding_text,
)
from .typegraph import build_graph, check_ref, repair_plan


def _fail(message: str) -> None:
    raise click.ClickException(message)


def _load_registry_arg(tools: str, with_operators: bool = False):
    path = Path(tools)
    if not path.exists():
        raise click.UsageError(f"tools file not found: {tools}")
    try:
        registry = load_registry(path)
    except RegistryError as exc:
        _fail(str(exc))
    return register_operator_tools(registry) if with_operators else registry


def _read_plan_text(in_file: str | None) -> str:
    if in_file:
        path = Path(in_file)
        if not path.exists():
            raise click.UsageError(f"input file not found: {in_file}")
        return path.read_text(encoding="utf-8")
    return sys.stdin.read()


def _provider(kind: str):
    return HashEmbeddingProvider() if kind == "hash" else RemoteEmbeddingProvider()


_TOOLS_OPTION = click.option(
    "--tools", default=str(fixture_tools_path()), show_default=False,
    help="Tool registry JSON file (defaults to the bundled fixture).",
)


@click.group()
@click.version_option(__version__)
def main():
    """Plan, check, repair, enforce, execute, and score tool-call chains."""


@main.command("tools")
@_TOOLS_OPTION
@click.option("--graph", "dump_graph", is_flag=True, help="Dump the type graph edges as JSON.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text")
def cmd_tools(tools, dump_graph, fmt):
    """Validate a tool registry and print a summary or its type graph."""
    registry = _load_registry_arg(tools)
    if dump_graph:
        click.echo(json.dumps(build_graph(registry).dump(), indent=2))
        return
    diagnostics = validate_registry(registry)
    if fmt == "json":
        click.echo(json.dumps({
            "version": registry.version,
            "tools": list(registry.names),
            "diagnostics": [d.__dict__ for d in diagnostics],
        }, indent=2))
    else:
        click.echo(f"registry {registry.version}: {len(registry)} tools")
        for name in registry.names:
            click.echo(f"  {name}")
        for diag in diagnostics:
            click.echo(f"{diag.severity}: {diag.location}: {diag.message}")
    if any(d.severity == "error" for d in diagnostics):
        sys.exit(1)


@main.command("index")
@_TOOLS_OPTION
@click.option("--out", required=True, help="Corpus cache file to write.")
@click.option("--kind", type=click.Choice(["tools", "examples"]), default="tools")
@click.option("--dataset", default=None, help="Golden dataset JSONL (for --kind examples).")
@click.option("--provider", "provider_kind", type=click.Choice(["hash", "remote"]), default="hash")
def cmd_index(tools, out, kind, dataset, provider_kind):
    """Embed tool descriptions or example queries into a corpus cache."""
    registry = _load_registry_arg(tools)
    provider = _provider(provider_kind)
    try:
        if kind == "tools":
            items = [(name, tool_embedding_text(spec)) for name, spec in registry.tools.items()]
        else:
            if not dataset:
                raise click.UsageError("--kind examples needs --dataset")
            examples = load_golden_dataset(dataset)
            items = [(ex.id, ex.query) for ex in examples]
        corpus = index_corpus(provider, items, kind=kind, registry_version=registry.version)
        save_corpus(corpus, out)
    except (RetrievalError, DatasetError) as exc:
        _fail(str(exc))
    click.echo(f"indexed {len(items)} items into {out}")


@main.command("plan")
@click.argument("query")
@click.option("--pipeline", type=click.Choice(["enchant", "regains"]), default="regains")
@_TOOLS_OPTION
@click.option("--examples", default=None, help="Golden dataset JSONL used as worked examples.")
@click.option("--config", "config_file", default=None, help="Pipeline config JSON.")
@click.option("--mock", "replay_file", default=None, help="Replay JSONL; no network is touched.")
@click.option("--trace", "trace_file", default="trace.json", show_default=True)
@click.option("--with-operators", is_flag=True, help="Add op_* pseudo-tools to the registry.")
def cmd_plan(query, pipeline, tools, examples, config_file, replay_file, trace_file, with_operators):
    """Turn QUERY into a validated plan; plan JSON on stdout, trace to file."""
    registry = _load_registry_arg(tools, with_operators)
    config = PipelineConfig.from_file(config_file) if config_file else PipelineConfig.default()
    golden = None
    if examples:
        if not Path(examples).exists():
            raise click.UsageError(f"examples file not found: {examples}")
        try:
            golden = load_golden_dataset(examples)
        except DatasetError as exc:
            _fail(str(exc))
    ctx = PlannerContext.build(registry, HashEmbeddingProvider(), golden)
    model = load_replay(replay_file) if replay_file else RemoteChatModel()
    try:
        runner = run_enchant if pipeline == "enchant" else run_regains
        trace = runner(query, ctx, model, config)
    except (PipelineError, PromptError, CompletionError, RetrievalError) as exc:
        _fail(str(exc))
    Path(trace_file).write_text(trace.to_json(), encoding="utf-8")
    click.echo(trace.final_text)


@main.command("check")
@_TOOLS_OPTION
@click.option("--in", "in_file", default=None, help="Plan JSON file (stdin otherwise).")
def cmd_check(tools, in_file):
    """Validate references and type-graph compatibility of a plan."""
    registry = _load_registry_arg(tools, with_operators=True)
    text = _read_plan_text(in_file)
    outcome = parse_plan(text)
    if not outcome.ok:
        _fail(f"{outcome.kind}: {outcome.detail}")
    graph = build_graph(registry)
    errors = 0
    for diag in validate_refs(outcome.plan):
        click.echo(f"error: call {diag.position} argument {diag.argument!r}: {diag.message}")
        errors += 1
    for position, call in enumerate(outcome.plan.calls):
        for name, _ in call.arguments:
            result = check_ref(graph, outcome.plan, position, name)
            if result.status == "incompatible":
                click.echo(f"error: call {position} argument {name!r}: {result.note}")
                errors += 1
            elif result.compatible and result.wrapping_mismatch:
                click.echo(f"warning: call {position} argument {name!r}: {result.note} (repairable)")
    if errors:
        sys.exit(1)
    click.echo("ok")


@main.command("repair")
@_TOOLS_OPTION
@click.option("--in", "in_file", default=None, help="Plan JSON file (stdin otherwise).")
@click.option("--format", "fmt", type=click.Choice(["plan", "json"]), default="plan")
def cmd_repair(tools, in_file, fmt):
    """Re-wrap $$PREV references to match the type graph."""
    registry = _load_registry_arg(tools, with_operators=True)
    text = _read_plan_text(in_file)
    outcome = parse_plan(text)
    if not outcome.ok:
        _fail(f"{outcome.kind}: {outcome.detail}")
    repaired, repairs = repair_plan(build_graph(registry), outcome.plan)
    if fmt == "json":
        click.echo(json.dumps({
            "plan": json.loads(serialize_plan(repaired)),
            "repairs": [r.__dict__ for r in repairs],
        }, indent=2))
    else:
        click.echo(serialize_plan(repaired))
        for repair in repairs:
            click.echo(f"{repair.action}: call {repair.position} {repair.argument}: {repair.detail}", err=True)


@main.command("enforce")
@_TOOLS_OPTION
@click.option("--in", "in_file", default=None, help="Raw candidate text (stdin otherwise).")
@click.option("--format", "fmt", type=click.Choice(["plan", "json"]), default="plan")
def cmd_enforce(tools, in_file, fmt):
    """Project arbitrary text onto the schema-valid plan language."""
    registry = _load_registry_arg(tools, with_operators=True)
    text = _read_plan_text(in_file)
    repaired, edits = enforced_repair(compile_schema(registry), text)
    if fmt == "json":
        click.echo(json.dumps({"text": repaired, "edits": [e.__dict__ for e in edits]}, indent=2))
    else:
        click.echo(repaired)
        for edit in edits:
            click.echo(f"{edit.kind}@{edit.position}: {edit.text!r}", err=True)


@main.command("exec")
@_TOOLS_OPTION
@click.option("--in", "in_file", default=None, help="Plan JSON file (stdin otherwise).")
@click.option("--out", default=None, help="Write the execution trace here instead of stdout.")
def cmd_exec(tools, in_file, out):
    """Execute a plan on the bundled stub runtime."""
    registry = _load_registry_arg(tools, with_operators=True)
    text = _read_plan_text(in_file)
    outcome = parse_plan(text)
    if not outcome.ok:
        _fail(f"{outcome.kind}: {outcome.detail}")
    from .executor import ExecutionError

    try:
        trace = execute(outcome.plan, StubRuntime(), build_graph(registry))
    except ExecutionError as exc:
        _fail(str(exc))
    if out:
        Path(out).write_text(trace.to_json(), encoding="utf-8")
        click.echo(f"executed {len(trace.steps)} steps")
    else:
        click.echo(trace.to_json())


@main.command("eval")
@click.option("--dataset", required=True, help="Golden dataset JSONL.")
@click.option("--predictions", default=None,
              help="Predictions JSONL: one {\"predicted\": \"<plan text>\"} per dataset line.")
@click.option("--pipeline", type=click.Choice(["enchant", "regains"]), default=None,
              help="Generate predictions by running this pipeline instead.")
@click.option("--mock", "replay_file", default=None, help="Replay JSONL for --pipeline runs.")
@_TOOLS_OPTION
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]), default="table")
@click.option("--trace", "trace_file", default="eval_trace.json", show_default=True,
              help="Full report (per-example scores and any pipeline traces) is always written here.")
def cmd_eval(dataset, predictions, pipeline, replay_file, tools, fmt, trace_file):
    """Score predictions against the golden dataset."""
    registry = _load_registry_arg(tools)
    try:
        examples = load_golden_dataset(dataset)
    except DatasetError as exc:
        _fail(str(exc))
    if predictions is None and pipeline is None:
        raise click.UsageError("need --predictions or --pipeline")

    traces = None
    if predictions:
        predicted_texts = []
        for line_no, line in enumerate(Path(predictions).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                predicted_texts.append(record["predicted"] if isinstance(record, dict) else str(record))
            except (json.JSONDecodeError, KeyError) as exc:
                _fail(f"predictions line {line_no}: {exc}")
        if len(predicted_texts) != len(examples):
            _fail(f"{len(examples)} dataset records but {len(predicted_texts)} predictions")
    else:
        ctx = PlannerContext.build(registry, HashEmbeddingProvider(), examples)
        model = load_replay(replay_file) if replay_file else RemoteChatModel()
        runner = run_enchant if pipeline == "enchant" else run_regains
        predicted_texts = []
        traces = []
        for example in examples:
            try:
                trace = runner(example.query, ctx, model)
            except (PipelineError, CompletionError) as exc:
                _fail(f"pipeline failed on {example.query!r}: {exc}")
            predicted_texts.append(trace.final_text)
            traces.append(trace)

    records = [
        EvalRecord(query=ex.query, gold=ex.gold, predicted_text=text)
        for ex, text in zip(examples, predicted_texts)
    ]
    report = evaluate_dataset(records, registry, traces=traces)
    trace_doc = {"report": json.loads(report.to_json())}
    if traces:
        trace_doc["runs"] = [json.loads(t.to_json()) for t in traces]
    Path(trace_file).write_text(json.dumps(trace_doc, indent=2), encoding="utf-8")
    if fmt == "json":
        click.echo(report.to_json())
    elif fmt == "csv":
        click.echo(render_csv(report), nl=False)
    else:
        click.echo(render_table(report))
