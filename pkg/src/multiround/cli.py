"""Command-line interface, a thin client over the HTTP service.

By default commands talk to an in-process copy of the service, so no server
needs to be running; ``--server URL`` points them at a remote instance
instead. Exit codes: 0 success, 1 the run finished but some chains were
truncated, 2 configuration or usage errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import yaml

from .metrics import round_half_away_from_zero

EXIT_OK = 0
EXIT_TRUNCATED = 1
EXIT_CONFIG = 2


class ApiClient:
    """HTTP client bound either to a remote server or an in-process app."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            # The in-process test client import warns about its own
            # dependency choices; that is noise for CLI users.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> httpx.Response:
        return self._client.post(path, json=payload)

    def get(self, path: str) -> httpx.Response:
        return self._client.get(path)


@click.group()
@click.option(
    "--server",
    envvar="MULTIROUND_SERVER",
    default=None,
    help="Base URL of a running service; default is in-process.",
)
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Multi-round evaluation harness."""
    ctx.obj = ApiClient(server)


def _load_config_document(path: str) -> dict:
    file = Path(path)
    if not file.is_file():
        _die(f"config file not found: {path}")
    try:
        data = yaml.safe_load(file.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        _die(f"{path}: invalid YAML: {exc}")
    if not isinstance(data, dict):
        _die(f"{path}: expected a mapping at the top level")
    return data


def _die(message: str, code: int = EXIT_CONFIG) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _check_response(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        if not isinstance(detail, str):
            detail = json.dumps(detail)
        _die(f"{detail}", code=EXIT_CONFIG)
    return response.json()


def _print_run_status(status: dict, as_json: bool) -> int:
    if as_json:
        click.echo(json.dumps(status, indent=2, sort_keys=True))
    else:
        summary = status.get("summary") or {}
        click.echo(f"run {status['run_id']}: {status['state']}")
        if summary:
            click.echo(f"  directory: {summary['run_dir']}")
            click.echo(
                f"  records: {summary['record_count']}/{summary['expected_records']}"
                f"  requests: {summary['requests_made']}"
            )
            scores = summary.get("scores") or {}
            averages = summary.get("averages") or {}
            for name in sorted(scores):
                cells = "  ".join(
                    f"r{r}={round_half_away_from_zero(v):.1f}"
                    for r, v in sorted(scores[name].items(), key=lambda kv: int(kv[0]))
                )
                click.echo(f"  {name}: {cells}")
            if averages:
                cells = "  ".join(
                    f"r{r}={v:.1f}"
                    for r, v in sorted(averages.items(), key=lambda kv: int(kv[0]))
                )
                click.echo(f"  average: {cells}")
            if summary.get("truncated_chains"):
                click.echo(f"  truncated chains: {summary['truncated_chains']}")
    return EXIT_OK if status["state"] == "completed" else EXIT_TRUNCATED


_shared_run_options = [
    click.option("--run-dir", default=None, help="Exact run directory to use."),
    click.option("--rounds", type=int, default=None, help="Override n_rounds."),
    click.option(
        "--backend",
        type=click.Choice(["mock", "live"]),
        default=None,
        help="Override backend type.",
    ),
    click.option("--concurrency", type=int, default=None, help="Parallel chains."),
    click.option("--seed", type=int, default=None, help="Mock backend seed."),
    click.option("--json", "as_json", is_flag=True, help="Print the raw status JSON."),
]


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@main.command()
@click.option("--config", "config_path", required=True, help="YAML config file.")
@click.option("--run-id", default=None, help="Fix the run id (default: random).")
@_with_options(_shared_run_options)
@click.pass_obj
def run(
    client: ApiClient,
    config_path: str,
    run_id: str | None,
    run_dir: str | None,
    rounds: int | None,
    backend: str | None,
    concurrency: int | None,
    seed: int | None,
    as_json: bool,
) -> None:
    """Evaluate the configured dataset over multiple rounds."""
    payload = {
        "config": _load_config_document(config_path),
        "run_dir": run_dir,
        "run_id": run_id,
        "rounds": rounds,
        "backend": backend,
        "concurrency": concurrency,
        "seed": seed,
        "wait": True,
    }
    status = _check_response(client.post("/runs", payload))
    sys.exit(_print_run_status(status, as_json))


@main.command()
@click.option("--config", "config_path", default=None, help="Original config file.")
@_with_options(_shared_run_options)
@click.pass_obj
def resume(
    client: ApiClient,
    config_path: str | None,
    run_dir: str | None,
    rounds: int | None,
    backend: str | None,
    concurrency: int | None,
    seed: int | None,
    as_json: bool,
) -> None:
    """Continue an interrupted run from its directory."""
    if run_dir is None:
        _die("--run-dir is required for resume")
    payload = {
        "run_dir": run_dir,
        "config": _load_config_document(config_path) if config_path else None,
        "rounds": rounds,
        "backend": backend,
        "concurrency": concurrency,
        "seed": seed,
        "wait": True,
    }
    status = _check_response(client.post("/runs/resume", payload))
    sys.exit(_print_run_status(status, as_json))


@main.command()
@click.option("--run-dir", required=True, help="Run directory to report on.")
@click.pass_obj
def report(client: ApiClient, run_dir: str) -> None:
    """Render and print the report for an existing run."""
    data = _check_response(client.post("/reports", {"run_dir": run_dir}))
    click.echo(data["markdown"], nl=False)
    for name in data["files"]:
        click.echo(f"wrote {name}", err=True)


@main.command()
@click.option("--run-dir", required=True, help="Run directory to analyze.")
@click.option(
    "--keyword",
    "keywords",
    multiple=True,
    help="Words to count (repeatable); defaults to but/wait/maybe/therefore.",
)
@click.pass_obj
def analyze(client: ApiClient, run_dir: str, keywords: tuple[str, ...]) -> None:
    """Print trajectory, hedge-word, and length analysis as JSON."""
    payload = {"run_dir": run_dir, "keywords": list(keywords) or None}
    data = _check_response(client.post("/analyze", payload))
    click.echo(json.dumps(data["analysis"], indent=2, sort_keys=True))


@main.command()
@click.option("--p1", type=float, required=True, help="Round-1 accuracy.")
@click.option("--t-cc", type=float, required=True, help="P(correct stays correct).")
@click.option("--t-ic", type=float, required=True, help="P(incorrect becomes correct).")
@click.option("--rounds", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--counts", default=None, help='Trajectory counts as JSON, e.g. \'{"CC": 9, "CI": 1, "IC": 3, "II": 2}\'.')
@click.option("--json", "as_json", is_flag=True, help="Print the raw response JSON.")
@click.pass_obj
def simulate(
    client: ApiClient,
    p1: float,
    t_cc: float,
    t_ic: float,
    rounds: int,
    seed: int,
    counts: str | None,
    as_json: bool,
) -> None:
    """Predict per-round accuracy for a two-state answer process."""
    parsed_counts = None
    if counts is not None:
        try:
            parsed_counts = json.loads(counts)
        except json.JSONDecodeError as exc:
            _die(f"--counts is not valid JSON: {exc}")
    payload = {
        "p1": p1,
        "t_cc": t_cc,
        "t_ic": t_ic,
        "rounds": rounds,
        "seed": seed,
        "counts": parsed_counts,
    }
    data = _check_response(client.post("/simulate", payload))
    if as_json:
        click.echo(json.dumps(data, indent=2, sort_keys=True))
        return
    for round_no, acc in zip(data["rounds"], data["accuracies"]):
        click.echo(f"round {round_no}: {acc:.6f}")
    if data["fixed_point"] is not None:
        click.echo(f"fixed point: {data['fixed_point']:.6f}")
    if data.get("fitted"):
        fitted = data["fitted"]
        click.echo(
            f"fitted t_cc: {_fmt_opt(fitted['t_cc'])}  "
            f"t_ic: {_fmt_opt(fitted['t_ic'])}"
        )


@main.command("sft-gen")
@click.option("--config", "config_path", required=True, help="YAML config file.")
@click.option("--out", required=True, help="Output JSONL file for examples.")
@click.option("--max-rounds", type=int, default=4, show_default=True)
@click.option("--run-dir", default=None, help="Store directory (for resuming).")
@click.pass_obj
def sft_gen(
    client: ApiClient,
    config_path: str,
    out: str,
    max_rounds: int,
    run_dir: str | None,
) -> None:
    """Generate verified fine-tuning examples from multi-round chains."""
    payload = {
        "config": _load_config_document(config_path),
        "out": out,
        "max_rounds": max_rounds,
        "run_dir": run_dir,
    }
    data = _check_response(client.post("/sft/generate", payload))
    summary = data["summary"]
    click.echo(
        f"emitted {summary['emitted']}/{summary['total_tasks']} examples "
        f"({summary['yield_fraction']:.1%}) to {summary['out_path']}"
    )
    for rounds_used, count in sorted(
        summary["rounds_used_counts"].items(), key=lambda kv: int(kv[0])
    ):
        click.echo(f"  solved at round {rounds_used}: {count}")
    if summary["failed_tasks"]:
        click.echo(f"  tasks without a verified answer: {summary['failed_tasks']}")


@main.command()
@click.option("--extracted", default=None, help="Extracted answer (omit for absent).")
@click.option("--gold", required=True, help="Gold answer.")
@click.option(
    "--kind",
    type=click.Choice(["integer", "expression", "choice", "code"]),
    required=True,
)
@click.pass_obj
def verify(client: ApiClient, extracted: str | None, gold: str, kind: str) -> None:
    """Check one extracted answer against a gold answer."""
    payload = {"extracted": extracted, "gold": gold, "kind": kind}
    data = _check_response(client.post("/verify", payload))
    click.echo(data["verdict"])


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


def _fmt_opt(value: float | None) -> str:
    return f"{value:.6f}" if value is not None else "n/a"


if __name__ == "__main__":
    main()
