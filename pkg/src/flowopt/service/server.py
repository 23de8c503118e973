"""Process entry point for the HTTP service."""
from __future__ import annotations

import errno
import socket
from pathlib import Path

import uvicorn

from .app import create_app


class BindError(OSError):
    pass


def check_port(host: str, port: int) -> None:
    """Fail before listening if the address is taken."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError as exc:
            raise BindError(exc.errno or errno.EADDRINUSE, f"cannot bind {host}:{port}: {exc.strerror}") from None


def serve(port: int = 8000, data_dir="flowopt-data", workers: int = 2, host: str = "127.0.0.1") -> None:
    """Serve until SIGINT/SIGTERM; in-flight requests finish before exit."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    data = Path(data_dir)
    data.mkdir(parents=True, exist_ok=True)
    check_port(host, port)
    app = create_app(data, workers)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False,
                            http="httptools", loop="asyncio", backlog=2048, timeout_graceful_shutdown=30)
    uvicorn.Server(config).run()
