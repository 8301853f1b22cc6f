"""Experiment endpoints: presets, runs, sweeps and topology reports."""
import asyncio

import yaml
from aiohttp import web

from config import METHODS, LEDGER_METHODS
from api.jobs import JobManager
from api.log_hub import LogHub
from core.experiment import SWEEP_AXES, ExperimentConfig, ExperimentRunner, parse_config
from data import PARTITION_PRESETS, TOPOLOGY_PRESETS


async def _read_config(request: web.Request) -> tuple:
    """(body, ExperimentConfig) from {"config": <YAML text or mapping>}."""
    if request.can_read_body:
        try:
            body = await request.json()
        except ValueError:
            raise ValueError("request body must be JSON")
    else:
        body = {}
    if not isinstance(body, dict):
        raise ValueError("request body must be a JSON object")
    raw = body.get("config", "")
    if isinstance(raw, dict):
        raw = yaml.safe_dump(raw, sort_keys=False)
    if not isinstance(raw, str):
        raise ValueError("'config' must be YAML text or a mapping")
    return body, parse_config(raw)


def _submit(request: web.Request, operation: str, kind: str, output_dir, work) -> web.Response:
    """Queue work(job, log) on the executor and answer 202; kind doubles as the log tag."""
    jm: JobManager = request.app["job_manager"]
    log_hub: LogHub = request.app["log_hub"]
    job = jm.create_job(operation, kind, output_dir)
    log = log_hub.callback(kind, job.job_id)
    log(f"[job {job.job_id}] {operation} queued -> {job.output_dir}")
    body = jm.execute(job, lambda j: work(j, log), log)
    asyncio.get_event_loop().run_in_executor(None, body)
    return web.json_response(job.to_dict(), status=202)


async def get_presets(request: web.Request) -> web.Response:
    """Partition and topology presets plus the method lists."""
    return web.json_response({
        "partitions": PARTITION_PRESETS,
        "topologies": TOPOLOGY_PRESETS,
        "methods": METHODS,
        "ledger_methods": LEDGER_METHODS,
        "sweep_axes": SWEEP_AXES,
        "defaults": ExperimentConfig().to_dict(),
    })


async def post_run(request: web.Request) -> web.Response:
    """Run an experiment grid. Returns a job ID."""
    _, config = await _read_config(request)

    def work(job, log):
        summary = ExperimentRunner(config, log, job.report).run(job.output_dir)
        return {"output_dir": summary.output_dir, **summary.to_dict()}

    return _submit(request, "run", "run", config.output_dir, work)


async def post_sweep(request: web.Request) -> web.Response:
    """Sweep N_m or K. Body: {"config": ..., "axis": "K", "values": [1, 5, 20]}."""
    body, config = await _read_config(request)
    axis = body.get("axis")
    values = body.get("values")
    if axis not in SWEEP_AXES:
        raise ValueError(f"'axis' must be one of {SWEEP_AXES}")
    if not isinstance(values, list) or not values or not all(isinstance(v, int) for v in values):
        raise ValueError("'values' must be a non-empty list of integers")

    def work(job, log):
        return ExperimentRunner(config, log, job.report).sweep(axis, values, job.output_dir)

    return _submit(request, f"sweep_{axis}", "sweep", config.output_dir, work)


async def post_topology_report(request: web.Request) -> web.Response:
    """Load comparison across builtin topologies. Returns a job ID."""
    _, config = await _read_config(request)

    def work(job, log):
        return ExperimentRunner(config, log, job.report).topo_report(job.output_dir)

    return _submit(request, "topology_report", "topology", config.output_dir, work)


def setup(app: web.Application):
    app.router.add_get("/api/presets", get_presets)
    app.router.add_post("/api/runs", post_run)
    app.router.add_post("/api/sweeps", post_sweep)
    app.router.add_post("/api/topology-report", post_topology_report)
