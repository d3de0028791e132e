"""Pipeline configuration and the runtime wiring shared by CLI and service.

The config file is flat ``key = value`` text (TOML-style scalars, ``#``
comments). The GNSSRAG_CONFIG environment variable overrides the default
path. Referenced paths must exist at load time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .describer import DescriberEndpoint, describe_remote, describe_templated
from .embedder import EncoderHandle, embed_baseline, embed_external
from .errors import ConfigError
from .promptkit import DEFAULT_K, GenParams
from .vectorstore import VectorIndex, load_index

ENV_CONFIG_VAR = "GNSSRAG_CONFIG"
DEFAULT_CONFIG_FILE = "gnssrag.conf"

_EMBEDDERS = ("baseline", "external")
_DESCRIBERS = ("templated", "remote")


@dataclass
class PipelineConfig:
    index_path: Path
    dataset_dir: Path | None = None
    embedder: str = "baseline"
    encoder: EncoderHandle | None = None
    describer: str = "templated"
    describer_endpoint: DescriberEndpoint | None = None
    gen_params: GenParams = field(default_factory=GenParams)
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.embedder not in _EMBEDDERS:
            raise ConfigError(f"embedder must be one of {_EMBEDDERS}, got {self.embedder!r}")
        if self.describer not in _DESCRIBERS:
            raise ConfigError(f"describer must be one of {_DESCRIBERS}, got {self.describer!r}")
        if self.embedder == "external" and self.encoder is None:
            raise ConfigError("embedder=external requires encoder_url or encoder_model_path")
        if self.describer == "remote" and self.describer_endpoint is None:
            raise ConfigError("describer=remote requires describer_url")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


def _parse_scalar(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = _parse_scalar(raw)
    return values


def config_from_values(values: dict, base_dir: Path | None = None) -> PipelineConfig:
    base = base_dir or Path.cwd()

    def resolve(key: str) -> Path | None:
        if key not in values:
            return None
        p = Path(str(values[key]))
        return p if p.is_absolute() else base / p

    index_path = resolve("index_path")
    if index_path is None:
        raise ConfigError("config is missing required key index_path")
    if not index_path.exists():
        raise ConfigError(f"index_path does not exist: {index_path}")
    dataset_dir = resolve("dataset_dir")
    if dataset_dir is not None and not dataset_dir.is_dir():
        raise ConfigError(f"dataset_dir does not exist: {dataset_dir}")

    encoder = None
    if values.get("embedder") == "external":
        model_path = resolve("encoder_model_path")
        if model_path is not None and not model_path.exists():
            raise ConfigError(f"encoder_model_path does not exist: {model_path}")
        encoder = EncoderHandle(
            url=values.get("encoder_url"),
            model_path=model_path,
            output_dim=int(values.get("encoder_output_dim", 512)),
            timeout_ms=int(values.get("encoder_timeout_ms", 30000)),
        )
    endpoint = None
    if values.get("describer") == "remote":
        endpoint = DescriberEndpoint(
            url=str(values.get("describer_url", "")),
            timeout_ms=int(values.get("describer_timeout_ms", 30000)),
        )
    gen_params = GenParams(
        temperature=float(values.get("temperature", 0.7)),
        top_k=int(values.get("top_k", 40)),
        max_tokens=int(values.get("max_tokens", 500)),
    )
    return PipelineConfig(
        index_path=index_path,
        dataset_dir=dataset_dir,
        embedder=str(values.get("embedder", "baseline")),
        encoder=encoder,
        describer=str(values.get("describer", "templated")),
        describer_endpoint=endpoint,
        gen_params=gen_params,
        k=int(values.get("k", DEFAULT_K)),
    )


def load_config(path: Path | str | None = None) -> PipelineConfig:
    chosen = Path(path) if path else Path(os.environ.get(ENV_CONFIG_VAR, DEFAULT_CONFIG_FILE))
    if not chosen.exists():
        raise ConfigError(f"config file not found: {chosen}")
    values = parse_config_text(chosen.read_text(encoding="utf-8"))
    return config_from_values(values, base_dir=chosen.resolve().parent)


@dataclass
class Runtime:
    """Loaded pipeline: one index, one embedder, one describer."""

    config: PipelineConfig
    index: VectorIndex
    embed_fn: Callable
    describe_fn: Callable


def build_runtime(config: PipelineConfig) -> Runtime:
    index = load_index(config.index_path)
    if config.embedder == "external":
        embed_fn = lambda snap: embed_external(snap, config.encoder)  # noqa: E731
    else:
        embed_fn = embed_baseline
    if config.describer == "remote":
        describe_fn = lambda prompt: describe_remote(prompt, config.describer_endpoint)  # noqa: E731
    else:
        describe_fn = describe_templated
    return Runtime(config=config, index=index, embed_fn=embed_fn, describe_fn=describe_fn)
