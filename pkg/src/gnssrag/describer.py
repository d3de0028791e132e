"""Description backends: a remote multimodal chat endpoint and a built-in
deterministic templated backend used for all offline tests.

The templated backend characterizes the snapshot from the prompt's retrieved
neighborhood: majority interference type, similarity-weighted bandwidth and
power (shared estimator with the task heads), and majority scenario.
"""

from __future__ import annotations

import json
import os
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum

from .errors import (
    MalformedResponseError,
    ParameterError,
    RemoteTimeoutError,
    TransportError,
)
from .promptkit import Prompt
from .tasks import _majority, weighted_param_estimate

TOKEN_ENV_VAR = "DESCRIBER_TOKEN"
DEFAULT_TIMEOUT_MS = 30000


class Backend(str, Enum):
    REMOTE = "Remote"
    TEMPLATED = "Templated"


@dataclass
class Description:
    text: str
    backend: Backend
    token_count: int
    latency_ms: float
    truncated: bool = False


@dataclass
class DescriberEndpoint:
    url: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    token_env: str = TOKEN_ENV_VAR

    def __post_init__(self):
        if not self.url:
            raise ParameterError("describer endpoint url must be non-empty")
        if self.timeout_ms <= 0:
            raise ParameterError(f"timeout_ms must be positive, got {self.timeout_ms}")


def count_tokens(text: str) -> int:
    """Whitespace tokenization; only used for budget enforcement."""
    return len(text.split())


def _truncate(text: str, max_tokens: int) -> tuple[str, int, bool]:
    tokens = text.split()
    if len(tokens) <= max_tokens:
        return text, len(tokens), False
    return " ".join(tokens[:max_tokens]), max_tokens, True


NO_CONTEXT_PARAGRAPH = (
    "General assessment without retrieved context: the snapshot is a "
    "1024-channel by 34-bin magnitude map. Anomalies, if present, appear as "
    "cells or regions rising well above the noise floor; common signatures "
    "include a diagonal sweep (chirp), blocks that jump between channels "
    "(frequency hopper), persistent narrow lines (modulated carrier or "
    "multitone), broadband stripes alternating in time (pulsed), or a "
    "uniformly elevated band (noise-like interference). Without reference "
    "examples no class label is assigned; inspect cells exceeding the floor "
    "by more than 6 dB."
)


def describe_templated(prompt: Prompt) -> Description:
    """Deterministic characterization derived from the prompt alone."""
    start = time.perf_counter()
    if prompt.context is None or not prompt.context.hits:
        text, n_tokens, truncated = _truncate(NO_CONTEXT_PARAGRAPH, prompt.params.max_tokens)
    else:
        hits = list(prompt.context.hits)
        intf_type, votes = _majority(hits, lambda h: h.metadata.get("intf_type", "None"))
        if intf_type == "None":
            text = (
                "The snapshot appears interference-free: the majority of its "
                f"{len(hits)} nearest labeled neighbors ({votes['None']} of "
                f"{len(hits)}) carry no interference, so no jammer parameters "
                "are estimated."
            )
        else:
            power, bandwidth = weighted_param_estimate(hits, prompt.context.metric)
            scenario, _ = _majority(
                hits, lambda h: str(h.metadata.get("scenario", 1))
            )
            text = (
                f"The snapshot appears to contain {intf_type.lower()} "
                f"interference. Its {len(hits)} nearest labeled neighbors "
                f"indicate bandwidth={bandwidth:.2f} and power={power:.2f}, "
                f"observed in multipath scenario {scenario}. Vote counts: "
                + ", ".join(f"{label}={count}" for label, count in sorted(votes.items()))
                + "."
            )
        text, n_tokens, truncated = _truncate(text, prompt.params.max_tokens)
    latency_ms = (time.perf_counter() - start) * 1000.0
    return Description(
        text=text,
        backend=Backend.TEMPLATED,
        token_count=n_tokens,
        latency_ms=latency_ms,
        truncated=truncated,
    )


def describe_remote(prompt: Prompt, endpoint: DescriberEndpoint) -> Description:
    """POST the prompt payload to the remote endpoint; expects {"text": ...}.

    Over-length responses are truncated to the prompt's token budget and
    flagged, not failed.
    """
    body = prompt.to_json().encode("utf-8")
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(endpoint.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    request = urllib.request.Request(endpoint.url, data=body, headers=headers, method="POST")
    start = time.perf_counter()
    try:
        with urllib.request.urlopen(request, timeout=endpoint.timeout_ms / 1000.0) as resp:
            raw = resp.read()
    except socket.timeout as exc:
        raise RemoteTimeoutError(f"describer at {endpoint.url} timed out") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, socket.timeout):
            raise RemoteTimeoutError(f"describer at {endpoint.url} timed out") from exc
        raise TransportError(f"describer at {endpoint.url} unreachable: {exc}") from exc
    latency_ms = (time.perf_counter() - start) * 1000.0
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedResponseError(f"describer response is not JSON: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
        raise MalformedResponseError('describer response must be {"text": string}')
    if not payload["text"]:
        raise MalformedResponseError("describer returned empty text")
    text, n_tokens, truncated = _truncate(payload["text"], prompt.params.max_tokens)
    return Description(
        text=text,
        backend=Backend.REMOTE,
        token_count=n_tokens,
        latency_ms=latency_ms,
        truncated=truncated,
    )
