"""Command-line client for the cellloc service.

Every verb becomes one HTTP call. With ``--server`` the call goes over the
network, otherwise an in-process app answers it.
"""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click
import yaml


class Client:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self._http = httpx.Client(base_url=server, timeout=None)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from cellloc.service import create_app

            self._http = TestClient(create_app())

    def post(self, path: str, body: dict) -> dict:
        resp = self._http.post(path, json=body)
        if resp.status_code >= 400:
            detail = resp.json().get("detail", resp.text)
            raise click.ClickException(f"{path}: {detail}")
        return resp.json()


def _abs(p) -> str | None:
    return None if p is None else str(Path(p).resolve())


def _overrides(config_path, sets) -> dict:
    out = {}
    if config_path:
        raw = yaml.safe_load(Path(config_path).read_text()) or {}
        if not isinstance(raw, dict):
            raise click.ClickException(f"{config_path}: config must be a flat mapping")
        out.update(raw)
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.ClickException(f"--set expects key=value, got {item!r}")
        out[key] = yaml.safe_load(value)
    return out


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def common(fn):
    fn = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override one config key.")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                      help="Flat YAML config file.")(fn)
    return fn


@click.group()
@click.option("--server", envvar="CELLLOC_SERVER", default=None, help="Base URL of a running service.")
@click.pass_context
def main(ctx, server):
    """Cellular fingerprint localization."""
    ctx.obj = server


def _client(ctx) -> Client:
    return Client(ctx.obj)


def _base(config_path, sets, seed) -> dict:
    return {"overrides": _overrides(config_path, sets), "seed": seed}


@main.command()
@common
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def simulate(ctx, config_path, seed, sets, out):
    """Generate a synthetic drive-test dataset."""
    _emit(_client(ctx).post("/simulate", {**_base(config_path, sets, seed), "out_dir": _abs(out)}))


@main.command()
@common
@click.option("--records", required=True, type=click.Path(exists=True))
@click.option("--fixes", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--report", type=click.Path(), default=None, help="Also write the sync report as JSON here.")
@click.pass_context
def sync(ctx, config_path, seed, sets, records, fixes, out, report):
    """Join provider records with GPS fixes into labeled samples."""
    res = _client(ctx).post("/sync", {**_base(config_path, sets, seed), "records_path": _abs(records),
                                      "fixes_path": _abs(fixes), "out_path": _abs(out)})
    if report:
        Path(report).write_text(json.dumps(res["report"], indent=1, sort_keys=True) + "\n")
    _emit(res)


@main.command()
@common
@click.option("--samples", required=True, type=click.Path(exists=True))
@click.option("--fixes", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def augment(ctx, config_path, seed, sets, samples, fixes, out):
    """Densify labeled samples with GP-synthesized fingerprints."""
    _emit(_client(ctx).post("/augment", {**_base(config_path, sets, seed), "samples_path": _abs(samples),
                                         "fixes_path": _abs(fixes), "out_path": _abs(out)}))


@main.command()
@common
@click.option("--samples", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Model artifact path (.npz).")
@click.pass_context
def train(ctx, config_path, seed, sets, samples, out):
    """Train the cell classifier."""
    _emit(_client(ctx).post("/train", {**_base(config_path, sets, seed), "samples_path": _abs(samples),
                                       "model_path": _abs(out)}))


@main.command()
@common
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def evaluate(ctx, config_path, seed, sets, data, out):
    """Run the full pipeline and compare against baselines."""
    _emit(_client(ctx).post("/evaluate", {**_base(config_path, sets, seed), "data_dir": _abs(data),
                                          "out_dir": _abs(out)}))


@main.command()
@common
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--param", "parameter", required=True)
@click.option("--values", required=True, help="Comma-separated values, e.g. 100,300,500.")
@click.option("--jobs", "n_jobs", type=int, default=1)
@click.pass_context
def sweep(ctx, config_path, seed, sets, data, out, parameter, values, n_jobs):
    """Vary one parameter and tabulate median error."""
    vals = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
    _emit(_client(ctx).post("/sweep", {**_base(config_path, sets, seed), "data_dir": _abs(data),
                                       "out_dir": _abs(out), "parameter": parameter, "values": vals,
                                       "n_jobs": n_jobs}))


@main.command()
@click.option("--phone-id", required=True)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--records", type=click.Path(exists=True), default=None)
@click.option("--top-n", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="Also write the estimate as JSON here.")
@click.pass_context
def locate(ctx, phone_id, model, records, top_n, out):
    """Estimate the current location of a phone from its latest record."""
    client = _client(ctx)
    if model:
        client.post("/model", {"model_path": _abs(model), "records_path": _abs(records)})
    elif ctx.obj is None:
        raise click.UsageError("--model is required without --server")
    res = client.post("/locate", {"phone_id": phone_id, "top_n": top_n})
    if out:
        Path(out).write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
    _emit(res)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--records", type=click.Path(exists=True), default=None)
def serve(host, port, model, records):
    """Run the HTTP service."""
    import uvicorn

    from cellloc.service import create_app

    uvicorn.run(create_app(_abs(model), _abs(records)), host=host, port=port)


if __name__ == "__main__":
    main()
