"""`ebe` command line: a thin client over the service handlers.

Every subcommand builds the same request model the HTTP API accepts and
either calls the handler in-process (default) or POSTs it to a running
service (``--server``). All output bytes are produced by shared formatters,
so the two paths cannot diverge.

Exit codes: 0 success, 2 usage/validation, 3 I/O, 4 internal.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
import click

from .errors import EbeError
from .service import handlers
from .service.models import (
    AttributeRequest,
    AttributeResponse,
    IndexRequest,
    IndexSummary,
    ReportRequest,
    ReportResponse,
    SweepRequest,
    SweepResponse,
)
from .attribution import records_to_jsonl

# Flag registry per subcommand; the --help coverage test checks against this.
COMMAND_FLAGS = {
    "index": ("--manifest", "--layer", "--cache", "--lax", "--server"),
    "attribute": (
        "--manifest",
        "--layer",
        "--k",
        "--queries",
        "--out",
        "--threads",
        "--lax",
        "--server",
    ),
    "sweep": (
        "--manifest",
        "--layers",
        "--k",
        "--out",
        "--max-resident-layers",
        "--threads",
        "--lax",
        "--server",
    ),
    "report": (
        "--manifest",
        "--layer-list",
        "--k",
        "--queries",
        "--images",
        "--out",
        "--columns",
        "--threads",
        "--lax",
        "--server",
    ),
    "serve": ("--host", "--port"),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation parameters; built before any file I/O happens."""

    command: str
    manifest_path: str
    threads: int = 1
    max_resident_layers: int = 1
    server: str | None = None
    params: dict = field(default_factory=dict)


def parse_int_list(text: str, *, name: str) -> tuple[int, ...]:
    """Parse '1,5,10' or '1-20' or a mix like '1-3,7' into a tuple of ints."""
    values: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo_text, _, hi_text = part.partition("-")
            try:
                lo, hi = int(lo_text), int(hi_text)
            except ValueError:
                raise click.UsageError(f"bad {name} range {part!r}")
            if hi < lo:
                raise click.UsageError(f"empty {name} range {part!r}")
            values.extend(range(lo, hi + 1))
        else:
            try:
                values.append(int(part))
            except ValueError:
                raise click.UsageError(f"bad {name} value {part!r}")
    if not values:
        raise click.UsageError(f"{name} must be non-empty")
    return tuple(values)


def parse_threads(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    try:
        threads = int(text)
    except ValueError:
        raise click.UsageError(f"--threads must be an integer or 'auto', got {text!r}")
    if threads < 1:
        raise click.UsageError(f"--threads must be positive, got {threads}")
    return threads


def _write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _post(server: str, path: str, payload: dict) -> "httpx.Response":
    import httpx

    try:
        response = httpx.post(
            server.rstrip("/") + path, json=payload, timeout=300.0
        )
    except httpx.HTTPError as exc:
        raise EbeErrorFromServer(3, f"cannot reach server {server}: {exc}")
    if response.status_code >= 400:
        try:
            body = response.json()
            raise EbeErrorFromServer(
                int(body.get("exit_code", 4)), str(body.get("error", response.text))
            )
        except ValueError:
            raise EbeErrorFromServer(4, f"server error {response.status_code}")
    return response


class EbeErrorFromServer(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _dispatch(server: str | None, path: str, request, response_type, handler):
    if server is None:
        return handler(request)
    response = _post(server, path, request.model_dump())
    return response_type.model_validate(response.json())


threads_option = click.option(
    "--threads",
    default=None,
    metavar="N|auto",
    help="Worker threads for retrieval (default: $EBE_THREADS or 1).",
)
lax_option = click.option(
    "--lax", is_flag=True, help="Tolerate unknown manifest keys."
)
server_option = click.option(
    "--server", default=None, metavar="URL", help="Send the request to a running service."
)
manifest_option = click.option(
    "--manifest", required=True, metavar="PATH", help="Dataset manifest JSON."
)


def _resolve_threads(threads: str | None) -> int:
    if threads is None:
        threads = os.environ.get("EBE_THREADS", "1")
    return parse_threads(threads)


@click.group(name="ebe")
def cli() -> None:
    """Example-based explanations: exact cosine k-NN over layer embeddings."""


@cli.command(name="index")
@manifest_option
@click.option("--layer", required=True, type=int, help="Layer ordinal to index.")
@click.option("--cache", is_flag=True, help="Persist unit rows beside the source (.norm).")
@lax_option
@server_option
def cmd_index(manifest: str, layer: int, cache: bool, lax: bool, server: str | None):
    """Validate one layer and print its index summary."""
    RunConfig(command="index", manifest_path=manifest, server=server,
              params={"layer": layer, "cache": cache})
    request = IndexRequest(
        manifest_path=manifest, layer_id=layer, cache=cache, lax=lax
    )
    summary = _dispatch(server, "/index", request, IndexSummary, handlers.handle_index)
    if summary.cached:
        click.echo(f"ebe: note: reusing cache {summary.cache_path}", err=True)
    click.echo(
        f"layer={summary.layer_id} n={summary.rows} d={summary.dims} "
        f"zero_rows={summary.zero_rows}"
    )


@cli.command(name="attribute")
@manifest_option
@click.option("--layer", required=True, type=int, help="Layer ordinal to query.")
@click.option("--k", "k", required=True, type=int, help="Number of neighbors.")
@click.option("--queries", required=True, metavar="IDS", help="Test ids, e.g. 1,2,3 or 0-9.")
@click.option("--out", default=None, metavar="PATH", help="Write JSON-lines here instead of stdout.")
@threads_option
@lax_option
@server_option
def cmd_attribute(manifest, layer, k, queries, out, threads, lax, server):
    """Emit one JSON attribution record per query."""
    query_ids = parse_int_list(queries, name="--queries")
    thread_count = _resolve_threads(threads)
    RunConfig(command="attribute", manifest_path=manifest, threads=thread_count,
              server=server, params={"layer": layer, "k": k, "queries": query_ids})
    request = AttributeRequest(
        manifest_path=manifest,
        layer_id=layer,
        k=k,
        query_ids=list(query_ids),
        threads=thread_count,
        lax=lax,
    )
    response = _dispatch(
        server, "/attribute", request, AttributeResponse, handlers.handle_attribute
    )
    _write_output(
        records_to_jsonl(a.model_dump() for a in response.attributions), out
    )


@cli.command(name="sweep")
@manifest_option
@click.option("--layers", required=True, metavar="IDS", help="Layer ids, e.g. 1-20 or 1,7,14.")
@click.option("--k", "k", required=True, metavar="KS", help="k values, e.g. 1,5,10,20.")
@click.option("--out", required=True, metavar="PATH", help="CSV output path.")
@click.option(
    "--max-resident-layers",
    default=1,
    type=int,
    metavar="R",
    help="How many layer indexes may be in memory at once.",
)
@threads_option
@lax_option
@server_option
def cmd_sweep(manifest, layers, k, out, max_resident_layers, threads, lax, server):
    """Run the (layer, k) accuracy sweep and write its CSV."""
    layer_ids = parse_int_list(layers, name="--layers")
    k_values = parse_int_list(k, name="--k")
    thread_count = _resolve_threads(threads)
    RunConfig(command="sweep", manifest_path=manifest, threads=thread_count,
              max_resident_layers=max_resident_layers, server=server,
              params={"layers": layer_ids, "k": k_values})
    request = SweepRequest(
        manifest_path=manifest,
        layer_ids=list(layer_ids),
        k_values=list(k_values),
        threads=thread_count,
        max_resident_layers=max_resident_layers,
        lax=lax,
    )
    response = _dispatch(server, "/sweep", request, SweepResponse, handlers.handle_sweep)
    _write_output(response.csv, out)
    click.echo(
        f"wrote {out}: {len(response.cells)} cells over {response.test_count} queries"
    )


@cli.command(name="report")
@manifest_option
@click.option("--layer-list", "layer_list", required=True, metavar="IDS", help="Layers to show, e.g. 1,7,14,20.")
@click.option("--k", "k", required=True, type=int, help="Neighbors per attribution.")
@click.option("--queries", required=True, metavar="IDS", help="Test ids to explain.")
@click.option("--images", required=True, metavar="DIR", help="Directory of <split>_<index>.png files.")
@click.option("--out", required=True, metavar="PATH", help="HTML output path.")
@click.option("--columns", default=5, type=int, help="Images per gallery row.")
@threads_option
@lax_option
@server_option
def cmd_report(manifest, layer_list, k, queries, images, out, columns, threads, lax, server):
    """Render an attribution gallery as a self-contained HTML file."""
    layer_ids = parse_int_list(layer_list, name="--layer-list")
    query_ids = parse_int_list(queries, name="--queries")
    thread_count = _resolve_threads(threads)
    RunConfig(command="report", manifest_path=manifest, threads=thread_count,
              server=server,
              params={"layers": layer_ids, "k": k, "queries": query_ids,
                      "images": images, "columns": columns})
    request = ReportRequest(
        manifest_path=manifest,
        layer_ids=list(layer_ids),
        k=k,
        query_ids=list(query_ids),
        image_dir=images,
        columns=columns,
        threads=thread_count,
        lax=lax,
    )
    response = _dispatch(server, "/report", request, ReportResponse, handlers.handle_report)
    _write_output(response.html, out)
    click.echo(f"wrote {out}")


@cli.command(name="serve")
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", default=8000, type=int, help="Bind port.")
def cmd_serve(host: str, port: int):
    """Run the attribution service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


def main(argv: list[str] | None = None) -> None:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        click.echo("ebe: error: aborted", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        click.echo(f"ebe: error: {exc.format_message()}", err=True)
        sys.exit(2)
    except EbeErrorFromServer as exc:
        click.echo(f"ebe: error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except EbeError as exc:
        click.echo(f"ebe: error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except OSError as exc:
        click.echo(f"ebe: error: {exc}", err=True)
        sys.exit(3)
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        click.echo(f"ebe: error: internal: {exc}", err=True)
        sys.exit(4)
    sys.exit(0)


if __name__ == "__main__":
    main()
