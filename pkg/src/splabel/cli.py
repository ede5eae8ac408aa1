"""Command-line client for the pseudo-label service.

The CLI never computes anything itself: each subcommand builds a
request, sends it through the HTTP API, and prints the response as a
single JSON line. By default the service app is mounted in-process
(no socket, same contract); ``--server`` points at a running instance
instead. ``splabel serve`` starts one.

Exit codes: 0 success, 2 input error, 3 stage-contract violation.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

EXIT_INPUT_ERROR = 2
EXIT_CONTRACT_VIOLATION = 3


def _load_config(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(json.dumps({"error": "ConfigError", "detail": str(exc)}))
        sys.exit(EXIT_INPUT_ERROR)


async def _post_async(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=600.0) as client:
            return await client.post(path, json=payload)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(
        transport=transport, base_url="http://splabel.local", timeout=600.0
    ) as client:
        return await client.post(path, json=payload)


def _invoke(command: str, manifests, out, config_path, jobs, server) -> None:
    payload = {
        "manifests": list(manifests),
        "out": out,
        "config": _load_config(config_path),
        "jobs": jobs,
    }
    try:
        response = asyncio.run(_post_async(server, f"/v1/{command}", payload))
    except httpx.HTTPError as exc:
        click.echo(json.dumps({"error": "TransportError", "detail": str(exc)}))
        sys.exit(EXIT_INPUT_ERROR)
    body = response.json()
    click.echo(json.dumps(body, sort_keys=True))
    if response.status_code == 200:
        return
    sys.exit(
        EXIT_CONTRACT_VIOLATION if response.status_code == 409 else EXIT_INPUT_ERROR
    )


def _stage_command(name: str, help_text: str):
    @click.command(name=name, help=help_text)
    @click.option("--manifest", "manifests", multiple=True, required=True,
                  help="Manifest JSON path (repeatable).")
    @click.option("--out", required=True, help="Output directory root.")
    @click.option("--config", "config_path", default=None,
                  help="Pipeline config JSON (hyperparams, k_target, stages).")
    @click.option("--jobs", default=1, show_default=True,
                  help="Concurrent manifest bound.")
    @click.option("--server", default=None,
                  help="Base URL of a running service; in-process if omitted.")
    def command(manifests, out, config_path, jobs, server):
        _invoke(name, manifests, out, config_path, jobs, server)

    return command


@click.group()
def main():
    """Pseudo-label pipeline client."""


_SUBCOMMANDS = {
    "affinity": "Build the pooled patch-affinity map from features.",
    "multicut": "Cluster patches into candidate object masks.",
    "filter": "Rate candidate masks and keep the top share.",
    "superpixel": "Segment superpixels (or ingest an external label map).",
    "sgm-loss": "Superpixel-guided mask loss and gradient per kept mask.",
    "stability": "Cross-checkpoint stability scores for predicted masks.",
    "adaptive-loss": "Boundary-weighted self-training loss and gradient.",
    "pipeline": "Run the configured stages end to end.",
    "overlay": "Render colored masks over the source image.",
}

for _name, _help in _SUBCOMMANDS.items():
    main.add_command(_stage_command(_name, _help))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
