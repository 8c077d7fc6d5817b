"""The two query-to-plan pipelines.

The three-stage pipeline retrieves tools, decomposes the query into sub-tasks
under an enforced sub-task schema, then recomposes them into a plan under the
plan schema restricted to the retrieved tools: two model calls, both
schema-constrained, followed by type-graph repair.

The single-call pipeline retrieves tools and worked examples, builds one
state/action-framed prompt seeded with curated insights, completes once,
projects the output onto the plan schema if needed, and finishes with
type-graph repair.

Prompt assembly is exposed as pure functions so replays can be authored
offline and prompt budgets checked without any model call.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import GoldenExample
from .enforcer import DecoderSession, compile_schema, compile_subtask_schema, enforced_repair
from .llm import CompletionRequest, constrained_complete, estimate_tokens
from .plan import Plan, parse_plan, serialize_plan
from .registry import Registry
from .retrieval import Corpus, index_corpus, retrieve_top_k, tool_embedding_text
from .typegraph import TypeGraph, build_graph, repair_plan

_DATA_DIR = Path(__file__).resolve().parent / "data"
_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PipelineError(RuntimeError):
    pass


class PromptError(ValueError):
    def __init__(self, placeholder: str):
        super().__init__(f"missing value for placeholder {{{placeholder}}}")
        self.placeholder = placeholder


def build_prompt(template: str, slots: dict[str, str]) -> str:
    """Deterministic placeholder substitution; every {name} slot must be
    provided and none may survive in the output."""
    def replace(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise PromptError(name)
        return slots[name]

    return _PLACEHOLDER.sub(replace, template)


@dataclass(frozen=True)
class SubTask:
    index: int
    thought: str
    tool_name: str


def serialize_subtasks(subtasks: list[SubTask]) -> str:
    doc = [{"id": st.index, "thought": st.thought, "tool_name": st.tool_name} for st in subtasks]
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=True)


def parse_subtasks(text: str) -> list[SubTask]:
    data = json.loads(text)
    return [SubTask(index=item["id"], thought=item["thought"], tool_name=item["tool_name"]) for item in data]


def _read_data(name: str) -> str:
    return (_DATA_DIR / name).read_text(encoding="utf-8")


_REQUIRED_SLOTS = {
    "decompose_template": ("query", "tools"),
    "recompose_template": ("query", "tools", "subtasks"),
    "rap_template": ("query", "tools", "examples", "insights"),
}


@dataclass
class PipelineConfig:
    k: int = 10
    example_count: int = 2
    decompose_template: str = ""
    recompose_template: str = ""
    rap_template: str = ""
    insights: tuple[str, ...] = ()
    model_id: str = "default"
    max_tokens: int = 1024
    temperature: float = 0.0
    token_budget: int = 4000

    def validate(self) -> None:
        for attr, slots in _REQUIRED_SLOTS.items():
            template = getattr(self, attr)
            missing = [slot for slot in slots if f"{{{slot}}}" not in template]
            if missing:
                raise ValueError(f"{attr} lacks required placeholders: {missing}")

    @classmethod
    def default(cls, **overrides) -> "PipelineConfig":
        config = cls(
            decompose_template=_read_data("templates/decompose.txt"),
            recompose_template=_read_data("templates/recompose.txt"),
            rap_template=_read_data("templates/rap.txt"),
            insights=tuple(
                line.strip()
                for line in _read_data("insights.txt").splitlines()
                if line.strip()
            ),
        )
        for key, value in overrides.items():
            setattr(config, key, value)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Config file: JSON with k, example_count, template paths, insights
        path and model params; missing fields fall back to the defaults."""
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        base = Path(path).resolve().parent
        config = cls.default()
        for key in ("k", "example_count", "model_id", "max_tokens", "temperature", "token_budget"):
            if key in doc:
                setattr(config, key, doc[key])
        templates = doc.get("templates", {})
        for key, attr in (("decompose", "decompose_template"),
                          ("recompose", "recompose_template"),
                          ("rap", "rap_template")):
            if key in templates:
                setattr(config, attr, (base / templates[key]).read_text(encoding="utf-8"))
        if "insights" in doc:
            text = (base / doc["insights"]).read_text(encoding="utf-8")
            config.insights = tuple(line.strip() for line in text.splitlines() if line.strip())
        config.validate()
        return config


def render_tool_docs(registry: Registry, names: list[str] | tuple[str, ...]) -> str:
    lines: list[str] = []
    for name in names:
        spec = registry.get(name)
        if spec is None:
            continue
        signature = ", ".join(f"{a.name}: {a.value_type.render()}" for a in spec.arguments)
        lines.append(f"- {spec.name}({signature}) -> {spec.returns.render()}")
        lines.append(f"    {spec.description}")
        for arg in spec.arguments:
            if arg.description:
                lines.append(f"    {arg.name}: {arg.description}")
    return "\n".join(lines)


def render_examples(examples: list[GoldenExample]) -> str:
    blocks = [f"Query: {ex.query}\nPlan: {ex.gold_text}" for ex in examples]
    return "\n\n".join(blocks) if blocks else "(none)"


@dataclass
class PlannerContext:
    """Immutable inputs shared by pipeline runs: registry, embedding provider,
    indexed corpora, golden examples and the type graph."""

    registry: Registry
    provider: object
    tool_corpus: Corpus
    example_corpus: Corpus | None = None
    examples: dict[str, GoldenExample] = field(default_factory=dict)
    graph: TypeGraph | None = None

    @classmethod
    def build(cls, registry: Registry, provider, golden_examples: list[GoldenExample] | None = None) -> "PlannerContext":
        tool_items = [(name, tool_embedding_text(spec)) for name, spec in registry.tools.items()]
        tool_corpus = index_corpus(provider, tool_items, kind="tools", registry_version=registry.version)
        example_corpus = None
        examples: dict[str, GoldenExample] = {}
        if golden_examples:
            example_corpus = index_corpus(
                provider,
                [(ex.id, ex.query) for ex in golden_examples],
                kind="examples",
                registry_version=registry.version,
            )
            examples = {ex.id: ex for ex in golden_examples}
        return cls(
            registry=registry,
            provider=provider,
            tool_corpus=tool_corpus,
            example_corpus=example_corpus,
            examples=examples,
            graph=build_graph(registry),
        )


@dataclass
class PipelineTrace:
    pipeline: str
    query: str
    retrieved_tools: list[tuple[str, float]]
    retrieved_examples: list[str]
    prompts: dict[str, str]
    raw_texts: dict[str, str]
    enforcement: dict[str, str]
    repairs: list[dict]
    final_plan: Plan
    final_text: str
    llm_calls: int
    prompt_tokens: int
    completion_tokens: int

    def to_json(self) -> str:
        doc = {
            "pipeline": self.pipeline,
            "query": self.query,
            "retrieved_tools": [{"id": i, "score": s} for i, s in self.retrieved_tools],
            "retrieved_examples": self.retrieved_examples,
            "prompts": self.prompts,
            "raw_texts": self.raw_texts,
            "enforcement": self.enforcement,
            "repairs": self.repairs,
            "final_plan": json.loads(self.final_text),
            "llm_calls": self.llm_calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }
        return json.dumps(doc, indent=2)


def _retrieve_tools(query: str, ctx: PlannerContext, config: PipelineConfig) -> list[tuple[str, float]]:
    if not ctx.tool_corpus.items:
        raise PipelineError("tool corpus is empty; nothing to retrieve")
    return retrieve_top_k(query, ctx.tool_corpus, ctx.provider, config.k)


def _graph_for(ctx: PlannerContext) -> TypeGraph:
    if ctx.graph is None:
        ctx.graph = build_graph(ctx.registry)
    return ctx.graph


def assemble_decompose_prompt(query: str, tool_names, registry: Registry, config: PipelineConfig) -> str:
    return build_prompt(
        config.decompose_template,
        {"query": query, "tools": render_tool_docs(registry, tool_names)},
    )


def assemble_recompose_prompt(query: str, subtasks_text: str, tool_names,
                              registry: Registry, config: PipelineConfig) -> str:
    return build_prompt(
        config.recompose_template,
        {
            "query": query,
            "tools": render_tool_docs(registry, tool_names),
            "subtasks": subtasks_text,
        },
    )


def assemble_rap_prompt(query: str, ctx: PlannerContext, config: PipelineConfig
                        ) -> tuple[str, list[tuple[str, float]], list[str]]:
    """(prompt, retrieved tools, retrieved example ids); pure, model-free."""
    retrieved = _retrieve_tools(query, ctx, config)
    tool_names = [name for name, _ in retrieved]
    example_ids: list[str] = []
    if ctx.example_corpus is not None and ctx.example_corpus.items and config.example_count > 0:
        ranked = retrieve_top_k(query, ctx.example_corpus, ctx.provider, config.example_count)
        example_ids = [ex_id for ex_id, _ in ranked]
    picked = [ctx.examples[ex_id] for ex_id in example_ids if ex_id in ctx.examples]
    prompt = build_prompt(
        config.rap_template,
        {
            "insights": "\n".join(f"- {line}" for line in config.insights),
            "tools": render_tool_docs(ctx.registry, tool_names),
            "examples": render_examples(picked),
            "query": query,
        },
    )
    return prompt, retrieved, example_ids


def _request(prompt: str, config: PipelineConfig) -> CompletionRequest:
    return CompletionRequest(
        prompt=prompt,
        model_id=config.model_id,
        max_tokens=config.max_tokens,
        temperature=config.temperature,
    )


def _names_in_registry(plan: Plan, registry: Registry) -> bool:
    for call in plan.calls:
        spec = registry.get(call.tool_name)
        if spec is None:
            return False
        for name, _ in call.arguments:
            if spec.argument(name) is None:
                return False
    return True


def run_enchant(query: str, ctx: PlannerContext, model, config: PipelineConfig | None = None) -> PipelineTrace:
    """Retrieve, decompose under the sub-task schema, recompose under the plan
    schema restricted to the retrieved tools, then type-graph repair.
    Exactly two model calls."""
    config = config or PipelineConfig.default()
    retrieved = _retrieve_tools(query, ctx, config)
    tool_names = [name for name, _ in retrieved]

    decompose_prompt = assemble_decompose_prompt(query, tool_names, ctx.registry, config)
    decompose_session = DecoderSession(compile_subtask_schema(tool_names))
    decompose_result = constrained_complete(model, _request(decompose_prompt, config), decompose_session)
    subtasks = parse_subtasks(decompose_result.text)

    recompose_prompt = assemble_recompose_prompt(
        query, serialize_subtasks(subtasks), tool_names, ctx.registry, config
    )
    sub_registry = ctx.registry.subset(tool_names)
    recompose_session = DecoderSession(compile_schema(sub_registry))
    recompose_result = constrained_complete(model, _request(recompose_prompt, config), recompose_session)

    outcome = parse_plan(recompose_result.text)
    if not outcome.ok:
        raise PipelineError(f"enforced recomposition produced unparseable text: {outcome.detail}")
    final_plan, repairs = repair_plan(_graph_for(ctx), outcome.plan)

    return PipelineTrace(
        pipeline="enchant",
        query=query,
        retrieved_tools=retrieved,
        retrieved_examples=[],
        prompts={"decompose": decompose_prompt, "recompose": recompose_prompt},
        raw_texts={"decompose": decompose_result.text, "recompose": recompose_result.text},
        enforcement={"decompose": decompose_result.mode, "recompose": recompose_result.mode},
        repairs=[repair.__dict__ for repair in repairs],
        final_plan=final_plan,
        final_text=serialize_plan(final_plan),
        llm_calls=2,
        prompt_tokens=decompose_result.prompt_tokens + recompose_result.prompt_tokens,
        completion_tokens=decompose_result.completion_tokens + recompose_result.completion_tokens,
    )


def run_regains(query: str, ctx: PlannerContext, model, config: PipelineConfig | None = None) -> PipelineTrace:
    """One retrieval-augmented, insight-guided prompt, exactly one model call;
    output projected onto the plan schema when it strays, then type-graph
    repaired."""
    config = config or PipelineConfig.default()
    prompt, retrieved, example_ids = assemble_rap_prompt(query, ctx, config)

    result = model.complete(_request(prompt, config))
    raw_text = result.text
    mode = "plain"

    outcome = parse_plan(raw_text)
    if not outcome.ok or not _names_in_registry(outcome.plan, ctx.registry):
        repaired_text, _ = enforced_repair(compile_schema(ctx.registry), raw_text)
        outcome = parse_plan(repaired_text)
        if not outcome.ok:
            raise PipelineError(f"projection repair produced unparseable text: {outcome.detail}")
        mode = "repaired"

    final_plan, repairs = repair_plan(_graph_for(ctx), outcome.plan)

    return PipelineTrace(
        pipeline="regains",
        query=query,
        retrieved_tools=retrieved,
        retrieved_examples=example_ids,
        prompts={"rap": prompt},
        raw_texts={"rap": raw_text},
        enforcement={"rap": mode},
        repairs=[repair.__dict__ for repair in repairs],
        final_plan=final_plan,
        final_text=serialize_plan(final_plan),
        llm_calls=1,
        prompt_tokens=result.prompt_tokens,
        completion_tokens=result.completion_tokens,
    )


def dry_run(query: str, ctx: PlannerContext, pipeline: str, config: PipelineConfig | None = None) -> dict[str, str]:
    """Assembled prompts without any model call, for prompt-budget checks.
    The recompose prompt is assembled with an empty sub-task list."""
    config = config or PipelineConfig.default()
    if pipeline == "regains":
        prompt, _, _ = assemble_rap_prompt(query, ctx, config)
        return {"rap": prompt}
    if pipeline == "enchant":
        retrieved = _retrieve_tools(query, ctx, config)
        tool_names = [name for name, _ in retrieved]
        return {
            "decompose": assemble_decompose_prompt(query, tool_names, ctx.registry, config),
            "recompose": assemble_recompose_prompt(query, "[]", tool_names, ctx.registry, config),
        }
    raise PipelineError(f"unknown pipeline {pipeline!r}")


def prompt_within_budget(prompt: str, config: PipelineConfig) -> bool:
    return estimate_tokens(prompt) <= config.token_budget
