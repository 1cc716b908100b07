"""Run configuration: strict YAML parsing with helpful rejection messages.

Unknown keys are errors, not silent no-ops; a typo like ``temprature``
would otherwise quietly run with defaults. Rejection messages point to the
closest real key, including nested ones.
"""

from __future__ import annotations

import difflib
import os
from pathlib import Path
from typing import Literal, Mapping

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .backends import DEFAULT_CREDENTIAL_ENV
from .models import Benchmark, SamplingParams


class ConfigError(Exception):
    """The configuration is malformed; the message says where and why."""


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MockParams(_StrictModel):
    p1: float = Field(default=0.6, ge=0.0, le=1.0)
    t_cc: float = Field(default=0.95, ge=0.0, le=1.0)
    t_ic: float = Field(default=0.3, ge=0.0, le=1.0)
    seed: int = 0


class BackendSettings(_StrictModel):
    type: Literal["mock", "live"] = "mock"
    model: str = "mock-reasoner"
    base_url: str | None = None
    credential_env: str = DEFAULT_CREDENTIAL_ENV
    timeout: float = Field(default=120.0, gt=0.0)
    mock: MockParams = MockParams()

    @model_validator(mode="after")
    def _check_live(self) -> "BackendSettings":
        if self.type == "live" and not self.base_url:
            raise ValueError("live backend requires backend.base_url")
        return self


class SamplingOverrides(_StrictModel):
    """Optional overrides; anything unset falls back to benchmark defaults."""

    temperature: float | None = Field(default=None, ge=0.0)
    top_p: float | None = Field(default=None, gt=0.0, le=1.0)
    max_tokens: int | None = Field(default=None, ge=1)
    samples_per_task: int | None = Field(default=None, ge=1)
    n_rounds: int | None = Field(default=None, ge=1)


class RunConfig(_StrictModel):
    dataset: str = Field(min_length=1)
    backend: BackendSettings = BackendSettings()
    sampling: SamplingOverrides = SamplingOverrides()
    concurrency: int = Field(default=8, ge=1)
    verifier_hook: str | None = None
    verifier_timeout: float = Field(default=60.0, gt=0.0)
    output_dir: str = "runs"


def parse_config(data: object, source: str = "config") -> RunConfig:
    """Validate a loaded YAML/JSON document into a RunConfig."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    try:
        config = RunConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_explain(exc)}") from exc
    _check_credentials(config, source)
    return config


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data, source=str(path))


def resolve_params(config: RunConfig, benchmark: Benchmark) -> SamplingParams:
    """Sampling parameters for one benchmark: defaults plus config overrides."""
    overrides = config.sampling
    return SamplingParams.for_benchmark(
        benchmark,
        temperature=overrides.temperature,
        top_p=overrides.top_p,
        max_tokens=overrides.max_tokens,
        samples_per_task=overrides.samples_per_task,
        n_rounds=overrides.n_rounds,
    )


def apply_overrides(
    config: RunConfig,
    *,
    rounds: int | None = None,
    backend: str | None = None,
    concurrency: int | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Fold command-line style overrides into a parsed config."""
    updates: dict[str, object] = {}
    if rounds is not None:
        updates["sampling"] = config.sampling.model_copy(update={"n_rounds": rounds})
    if concurrency is not None:
        updates["concurrency"] = concurrency
    backend_updates: dict[str, object] = {}
    if backend is not None:
        if backend not in ("mock", "live"):
            raise ConfigError(f"unknown backend {backend!r}; expected mock or live")
        backend_updates["type"] = backend
    if seed is not None:
        backend_updates["mock"] = config.backend.mock.model_copy(
            update={"seed": seed}
        )
    if backend_updates:
        updates["backend"] = config.backend.model_copy(update=backend_updates)
    if not updates:
        return config
    try:
        return RunConfig.model_validate(
            config.model_copy(update=updates).model_dump()
        )
    except ValidationError as exc:
        raise ConfigError(_explain(exc)) from exc


def _check_credentials(config: RunConfig, source: str) -> None:
    if config.backend.type != "live":
        return
    name = config.backend.credential_env
    if name and not os.environ.get(name):
        raise ConfigError(
            f"{source}: live backend needs a credential, but the environment "
            f"variable {name} is not set"
        )


def _known_paths() -> dict[str, list[str]]:
    """Leaf key -> dotted paths where such a key exists, for suggestions."""
    sections: dict[str, type[BaseModel]] = {
        "": RunConfig,
        "backend": BackendSettings,
        "backend.mock": MockParams,
        "sampling": SamplingOverrides,
    }
    paths: dict[str, list[str]] = {}
    for prefix, model in sections.items():
        for field in model.model_fields:
            dotted = f"{prefix}.{field}" if prefix else field
            paths.setdefault(field, []).append(dotted)
    return paths


def _explain(exc: ValidationError) -> str:
    known = _known_paths()
    all_leaves = list(known)
    parts = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"]]
        dotted = ".".join(loc) or "<root>"
        if err["type"] == "extra_forbidden":
            message = f'unknown key "{dotted}"'
            suggestions = difflib.get_close_matches(loc[-1], all_leaves, n=1)
            if suggestions:
                message += f' (did you mean "{known[suggestions[0]][0]}"?)'
            parts.append(message)
        else:
            parts.append(f"{dotted}: {err['msg']}")
    return "; ".join(parts)
