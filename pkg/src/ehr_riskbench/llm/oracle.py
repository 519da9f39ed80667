"""Oracle clients (HTTP, subprocess mock, in-process) and the inference loop.

All clients expose ``topk(request_id, prompt, k) -> TopKDistribution``.
:func:`run_inference` fans requests out over a bounded thread pool; results
are keyed by sample and assembled in input order, so scheduling never changes
the output. A sample whose prompt cannot be built or whose oracle call fails
is recorded with ``error`` set and an indeterminate 0.5 score — the run
continues. Only :class:`OracleUnreachable` (nothing answers at all) is fatal.
"""

from __future__ import annotations

import json
import subprocess
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from ..cohort import CohortSample
from ..errors import (
    CodeWithoutDescription,
    EmptyInput,
    OracleError,
    OracleUnreachable,
    OverLength,
)
from ..evaluate import PredictionSet
from ..model import CodeCatalog
from .extract import TopKDistribution, extract_yes_no
from .prompts import OracleProfile, build_prompt


class Oracle(Protocol):
    def topk(self, request_id: str, prompt: str, k: int) -> TopKDistribution: ...


class InProcessOracle:
    """Wrap a plain function ``(prompt, k) -> [(token, prob), ...]``."""

    def __init__(self, fn: Callable[[str, int], list[tuple[str, float]]]):
        self._fn = fn

    def topk(self, request_id: str, prompt: str, k: int) -> TopKDistribution:
        try:
            return TopKDistribution(tuple(self._fn(prompt, k)))
        except ValueError as exc:
            raise OracleError(str(exc)) from exc


class HttpOracle:
    """POST ``/v1/topk`` with ``{"id", "prompt", "k"}`` JSON bodies."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 1):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries

    def topk(self, request_id: str, prompt: str, k: int) -> TopKDistribution:
        payload = json.dumps({"id": request_id, "prompt": prompt, "k": k})
        request = urllib.request.Request(
            self.base_url + "/v1/topk",
            data=payload.encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    body = resp.read().decode("utf-8")
                return _parse_response(body, request_id)
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = exc
        raise OracleUnreachable(f"oracle at {self.base_url} unreachable: {last}")


class MockProcessOracle:
    """Drive the line-delimited subprocess mock; safe for threaded callers.

    The wire protocol is strictly one request line then one response line, so
    a lock serializes access to the pipes.
    """

    def __init__(self, argv: list[str]):
        self.argv = list(argv)
        self._proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)
        self._lock = threading.Lock()

    def topk(self, request_id: str, prompt: str, k: int) -> TopKDistribution:
        line = json.dumps({"id": request_id, "prompt": prompt, "k": k})
        with self._lock:
            if self._proc.poll() is not None:
                raise OracleUnreachable("mock oracle process has exited")
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
                reply = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise OracleUnreachable(f"mock oracle pipe failed: {exc}") from exc
        if not reply:
            raise OracleUnreachable("mock oracle closed its output")
        return _parse_response(reply, request_id)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self) -> "MockProcessOracle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _parse_response(body: str, request_id: str) -> TopKDistribution:
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise OracleError(f"oracle sent invalid JSON: {exc}") from exc
    if "error" in obj:
        raise OracleError(f"oracle error: {obj['error']}")
    if obj.get("id") != request_id:
        raise OracleError(
            f"oracle answered id {obj.get('id')!r} for request {request_id!r}")
    try:
        items = tuple((str(e["token"]), float(e["prob"])) for e in obj["topk"])
        exact = obj.get("exact_tokens")
        if exact is not None:
            int(exact)
        return TopKDistribution(items)
    except (KeyError, TypeError, ValueError) as exc:
        raise OracleError(f"malformed top-k payload: {exc}") from exc


@dataclass(frozen=True)
class InferenceResult:
    """Per-sample outcome; ``error`` is None on the happy path."""

    patient_id: str
    label: int
    p_yes: float
    indeterminate: bool
    s_yes: float = 0.0
    s_no: float = 0.0
    error: str | None = None


def run_inference(
    samples: list[CohortSample],
    catalog: CodeCatalog,
    condition: str,
    style: str,
    oracle: Oracle,
    profile: OracleProfile,
    instruction: str = "yesno",
    yes_variants: tuple[str, ...] = ("yes",),
    no_variants: tuple[str, ...] = ("no",),
    request_tag: str = "",
) -> list[InferenceResult]:
    """Prompt, query, and extract for every sample; bounded parallelism."""
    if not samples:
        raise EmptyInput("no samples to run inference on")

    def one(sample: CohortSample) -> InferenceResult:
        request_id = (f"{sample.patient_id}#{request_tag}" if request_tag
                      else sample.patient_id)
        try:
            prompt = build_prompt(sample, catalog, condition, style, profile,
                                  instruction)
            dist = oracle.topk(request_id, prompt.text, profile.k)
            if len(dist) > profile.k:
                raise OracleError(
                    f"oracle returned {len(dist)} tokens for k={profile.k}")
            result = extract_yes_no(dist, yes_variants, no_variants)
            return InferenceResult(sample.patient_id, sample.label,
                                   result.p_yes, result.indeterminate,
                                   result.s_yes, result.s_no)
        except (OracleError, OverLength, CodeWithoutDescription) as exc:
            return InferenceResult(sample.patient_id, sample.label, 0.5, True,
                                   error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=profile.parallelism) as pool:
        return list(pool.map(one, samples))


def to_prediction_set(results: list[InferenceResult],
                      model: str = "llm") -> PredictionSet:
    """Scores for evaluation; errored samples keep their 0.5 placeholder so
    paired comparisons stay aligned across models."""
    return PredictionSet(
        patient_ids=[r.patient_id for r in results],
        labels=np.array([r.label for r in results], dtype=np.int64),
        scores=np.array([r.p_yes for r in results]),
        model=model,
    )
