"""
Simulator Log Hub
Runs, sweeps and reports execute in executor threads and log through
callbacks bound to a tag and, for submitted work, a job id. Every line
lands in a bounded history and is pushed to connected WebSocket clients.
"""
import asyncio
import json
import threading
import time
from collections import deque
from typing import Callable, Optional, Set

from aiohttp import web

LOG_TAGS = ["run", "sweep", "topology", "bounds", "system"]


class LogHub:
    """Tagged log history with WebSocket broadcast."""

    MAX_HISTORY = 2000

    def __init__(self):
        self._history: deque = deque(maxlen=self.MAX_HISTORY)
        self._lock = threading.Lock()
        self._websockets: Set[web.WebSocketResponse] = set()
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    def set_loop(self, loop: asyncio.AbstractEventLoop):
        self._loop = loop

    def emit(self, message: str, tag: str = "system", job_id: Optional[str] = None):
        """Record a line from any thread; unknown tags file under 'system'."""
        entry = {
            "timestamp": time.time(),
            "tag": tag if tag in LOG_TAGS else "system",
            "job_id": job_id,
            "message": message,
        }
        with self._lock:
            self._history.append(entry)
        if self._loop and not self._loop.is_closed():
            self._loop.call_soon_threadsafe(asyncio.ensure_future, self._broadcast(entry))

    def callback(self, tag: str, job_id: Optional[str] = None) -> Callable[[str], None]:
        """log_callback(line) for engine and harness code."""
        return lambda line: self.emit(line, tag=tag, job_id=job_id)

    async def _broadcast(self, entry: dict):
        data = json.dumps({"type": "log", "data": entry})
        for ws in list(self._websockets):
            try:
                await ws.send_str(data)
            except Exception:
                self._websockets.discard(ws)

    def add_websocket(self, ws: web.WebSocketResponse):
        self._websockets.add(ws)

    def remove_websocket(self, ws: web.WebSocketResponse):
        self._websockets.discard(ws)

    async def close_all(self):
        for ws in list(self._websockets):
            try:
                await ws.close()
            except Exception:
                pass
        self._websockets.clear()

    def get_recent(self, limit: int = 200, tag: Optional[str] = None, job_id: Optional[str] = None) -> list:
        """Newest `limit` entries, oldest first, filtered by tag and/or job."""
        if limit <= 0:
            return []
        with self._lock:
            entries = list(self._history)
        if tag:
            entries = [e for e in entries if e["tag"] == tag]
        if job_id:
            entries = [e for e in entries if e["job_id"] == job_id]
        return [dict(e) for e in entries[-limit:]]
