"""Log endpoints: REST history and WebSocket streaming."""
import json
from aiohttp import web

from api.log_hub import LogHub, LOG_TAGS


def _query(request: web.Request, default_limit: str):
    limit = int(request.query.get("limit", default_limit))
    tag = request.query.get("tag")
    if tag and tag not in LOG_TAGS:
        raise ValueError(f"unknown log tag '{tag}'. Choose from: {LOG_TAGS}")
    return limit, tag, request.query.get("job")


async def get_logs(request: web.Request) -> web.Response:
    """Recent entries; ?tag=run|sweep|topology|bounds|system, ?job=<id>, ?limit=N."""
    log_hub: LogHub = request.app["log_hub"]
    limit, tag, job_id = _query(request, "200")
    entries = log_hub.get_recent(limit=limit, tag=tag, job_id=job_id)
    return web.json_response({"entries": entries, "count": len(entries)})


async def ws_logs(request: web.Request) -> web.WebSocketResponse:
    """Live log stream; sends recent history first unless ?history=false."""
    limit, tag, job_id = _query(request, "100")
    ws = web.WebSocketResponse()
    await ws.prepare(request)

    log_hub: LogHub = request.app["log_hub"]
    log_hub.add_websocket(ws)

    if request.query.get("history", "true") == "true":
        for entry in log_hub.get_recent(limit=limit, tag=tag, job_id=job_id):
            await ws.send_str(json.dumps({"type": "log", "data": entry}))

    try:
        async for _ in ws:
            pass  # read-only stream
    finally:
        log_hub.remove_websocket(ws)

    return ws


def setup(app: web.Application):
    app.router.add_get("/api/logs", get_logs)
    app.router.add_get("/api/ws/logs", ws_logs)
