"""Deterministic prompt assembly.

Three construction paths: a plain task-instruction prompt, retrieval of
neighbor context from the vector store, and an in-context prompt that
renders that context as labeled lines. Rendering is a pure function of its
inputs; identical inputs yield byte-identical prompt text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .embedder import Embedding
from .errors import ParameterError
from .vectorstore import Metric, SearchHit, VectorIndex

TEMPLATES_VERSION = 1

DEFAULT_K = 5


class DetailLevel(str, Enum):
    GENERAL = "General"
    SIGNAL_INFO_GENERAL = "SignalInfoGeneral"
    SIGNAL_INFO_DETAILED = "SignalInfoDetailed"
    GENERAL_WITH_INTERPRETATION = "GeneralWithInterpretation"


_TEMPLATE_FILES = {
    DetailLevel.GENERAL: "general.txt",
    DetailLevel.SIGNAL_INFO_GENERAL: "signal_info_general.txt",
    DetailLevel.SIGNAL_INFO_DETAILED: "signal_info_detailed.txt",
    DetailLevel.GENERAL_WITH_INTERPRETATION: "general_with_interpretation.txt",
}

_CONTEXT_CLAUSE = (
    "\nRetrieved context from the snapshot knowledge base follows; each line"
    "\nis one nearest neighbor with its ground-truth labels. Integrate it"
    "\ninto your answer."
)


@dataclass(frozen=True)
class QueryText:
    text: str
    detail_level: DetailLevel = DetailLevel.GENERAL

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ParameterError("question text must be non-empty")
        if not isinstance(self.detail_level, DetailLevel):
            object.__setattr__(self, "detail_level", DetailLevel(self.detail_level))


@dataclass(frozen=True)
class GenParams:
    """Generation parameters forwarded to the describer backend."""

    temperature: float = 0.7
    top_k: int = 40
    max_tokens: int = 500

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ParameterError(f"temperature {self.temperature} outside [0, 1]")
        if not isinstance(self.top_k, (int,)) or not 1 < self.top_k < 100:
            raise ParameterError(f"top_k {self.top_k} outside (1, 100)")
        if not isinstance(self.max_tokens, (int,)) or not 0 < self.max_tokens <= 500:
            raise ParameterError(f"max_tokens {self.max_tokens} outside (0, 500]")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_k": self.top_k,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class Context:
    """Retrieved neighborhood plus the provenance of the retrieval."""

    hits: tuple[SearchHit, ...]
    query_id: int
    k: int
    metric: Metric

    def __post_init__(self):
        object.__setattr__(self, "hits", tuple(self.hits))


@dataclass
class Prompt:
    system_instruction: str
    question: str
    image_ref: str
    params: GenParams = field(default_factory=GenParams)
    context: Context | None = None
    context_block: str | None = None

    def text(self) -> str:
        """Canonical human-readable prompt text."""
        parts = [self.system_instruction]
        if self.context_block is not None:
            parts.append(self.context_block)
        parts.append(f"[image: {self.image_ref}]")
        parts.append(f"Question: {self.question}")
        return "\n\n".join(parts) + "\n"

    def to_payload(self) -> dict:
        return {
            "system": self.system_instruction,
            "context": self.context_block,
            "question": self.question,
            "image_ref": self.image_ref,
            "params": self.params.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))


def _load_template(level: DetailLevel) -> str:
    raw = (
        resources.files("gnssrag.templates")
        .joinpath(_TEMPLATE_FILES[level])
        .read_text(encoding="utf-8")
    )
    lines = [line for line in raw.splitlines() if not line.startswith("#")]
    return "\n".join(lines).strip()


def render_system_instruction(level: DetailLevel, with_context: bool) -> str:
    template = _load_template(level)
    return template.format(context_clause=_CONTEXT_CLAUSE if with_context else "")


def format_metadata_value(value) -> str:
    """Canonical rendering: integral floats print as integers, e.g. 2.0 -> 2."""
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def render_context_block(ctx: Context) -> str:
    score_name = "similarity" if ctx.metric is Metric.COSINE else "distance"
    lines = [f"Context (k={ctx.k}, metric={ctx.metric.label}):"]
    for rank, hit in enumerate(ctx.hits, start=1):
        meta = hit.metadata
        fields = [f"type={meta.get('intf_type', '?')}"]
        if meta.get("bandwidth") is not None:
            fields.append(f"bandwidth={format_metadata_value(meta['bandwidth'])}")
        if meta.get("power") is not None:
            fields.append(f"power={format_metadata_value(meta['power'])}")
        if meta.get("scenario") is not None:
            fields.append(f"scenario={format_metadata_value(meta['scenario'])}")
        fields.append(f"{score_name}={hit.score:.4f}")
        lines.append(f"neighbor {rank}: " + " ".join(fields))
    return "\n".join(lines)


def assemble_task_instruction(image_ref, t: QueryText, params: GenParams | None = None) -> Prompt:
    """Instruction + question + image reference, no retrieved context."""
    return Prompt(
        system_instruction=render_system_instruction(t.detail_level, with_context=False),
        question=t.text,
        image_ref=str(image_ref),
        params=params or GenParams(),
    )


def retrieve_context(
    index: VectorIndex, query_embedding: Embedding, t: QueryText, k: int = DEFAULT_K
) -> Context:
    """Top-k neighborhood of the query embedding, with provenance."""
    hits = index.search(query_embedding, k)
    return Context(
        hits=tuple(hits),
        query_id=int(query_embedding.snapshot_id),
        k=int(k),
        metric=index.metric,
    )


def assemble_in_context(
    ctx: Context, image_ref, t: QueryText, params: GenParams | None = None
) -> Prompt:
    """Prompt whose context block lists the retrieved neighbors in hit order."""
    if not ctx.hits:
        raise ParameterError(
            "context has no hits; use assemble_task_instruction for context-free prompts"
        )
    return Prompt(
        system_instruction=render_system_instruction(t.detail_level, with_context=True),
        question=t.text,
        image_ref=str(image_ref),
        params=params or GenParams(),
        context=ctx,
        context_block=render_context_block(ctx),
    )
