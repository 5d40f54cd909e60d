"""Running an ASGI app under uvicorn, in the foreground or on a background thread."""
from __future__ import annotations

import socket
import threading
import time

import uvicorn

from rpdi.config import Settings


class ServerThread:
    """Serve ``app`` on a background thread. Port 0 picks a free port.

    >>> with ServerThread(app) as srv:   # doctest: +SKIP
    ...     httpx.get(srv.url + "/health")
    """

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0, startup_timeout: float = 10.0):
        self.app = app
        self.host = host
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self.port = self._sock.getsockname()[1]
        self.startup_timeout = startup_timeout
        config = uvicorn.Config(app, log_level="warning", lifespan="on", timeout_graceful_shutdown=5)
        self.server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def _run(self) -> None:
        try:
            self.server.run(sockets=[self._sock])
        except SystemExit:  # uvicorn exits when lifespan startup fails
            pass

    def start(self) -> "ServerThread":
        self._thread.start()
        deadline = time.monotonic() + self.startup_timeout
        while not self.server.started:
            if not self._thread.is_alive():
                self._sock.close()
                raise RuntimeError(f"server on {self.url} failed to start")
            if time.monotonic() > deadline:
                raise TimeoutError(f"server on {self.url} did not start in {self.startup_timeout}s")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=10)
        self._sock.close()

    def __enter__(self) -> "ServerThread":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(settings: Settings) -> None:
    """Run the gateway in the foreground until interrupted. In-flight streams
    get ``gateway.shutdown_timeout`` seconds to drain on shutdown."""
    from rpdi.gateway.app import create_app

    gw = settings.gateway
    uvicorn.run(
        create_app(settings),
        host=gw.host,
        port=gw.port,
        log_level="info",
        timeout_graceful_shutdown=int(gw.shutdown_timeout),
    )
