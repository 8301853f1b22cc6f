"""Status and settings endpoints."""
from aiohttp import web

from config import load_settings, save_settings, APP_NAME
from api.jobs import JobManager


async def get_status(request: web.Request) -> web.Response:
    """Server version, output root and job counts."""
    jm: JobManager = request.app["job_manager"]
    return web.json_response({
        "name": APP_NAME,
        "version": request.app["version"],
        "base_dir": str(request.app["base_dir"]),
        "output_root": str(request.app["output_root"]),
        "jobs": jm.counts(),
    })


async def get_settings(request: web.Request) -> web.Response:
    return web.json_response(load_settings())


async def put_settings(request: web.Request) -> web.Response:
    """Update settings (merge)."""
    data = await request.json()
    if not isinstance(data, dict):
        raise ValueError("settings must be a JSON object")
    save_settings(data)
    return web.json_response({"ok": True})


def setup(app: web.Application):
    app.router.add_get("/api/status", get_status)
    app.router.add_get("/api/settings", get_settings)
    app.router.add_put("/api/settings", put_settings)
