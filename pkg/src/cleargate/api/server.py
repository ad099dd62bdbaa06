"""Running the gateway under uvicorn, blocking or in a background thread."""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import uvicorn

from cleargate.api.app import create_app
from cleargate.errors import BindFailure, ConfigInvalid
from cleargate.orchestrator import Engine


@dataclass(frozen=True)
class ServiceConfig:
    policy: Path
    corpus: Path | None = None
    audit: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080

    def validate(self) -> None:
        if not 0 <= self.port <= 65535:
            raise ConfigInvalid("invalid port", [f"port: {self.port} out of range"])
        if not Path(self.policy).is_file():
            raise ConfigInvalid("policy file missing", [f"policy: {self.policy} not found"])
        if self.corpus is not None and not Path(self.corpus).is_file():
            raise ConfigInvalid("corpus file missing", [f"corpus: {self.corpus} not found"])


def _check_bind(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc


def _uvicorn(config: ServiceConfig, engine: Engine) -> uvicorn.Server:
    return uvicorn.Server(
        uvicorn.Config(create_app(engine), host=config.host, port=config.port, log_level="warning")
    )


def serve(config: ServiceConfig) -> None:
    """Run until SIGINT/SIGTERM; uvicorn drains in-flight requests on shutdown."""
    config.validate()
    engine = Engine.from_paths(config.policy, config.corpus, config.audit)
    _check_bind(config.host, config.port)
    _uvicorn(config, engine).run()


class ServiceHandle:
    """A gateway running on a daemon thread, mainly for integration tests."""

    def __init__(self, config: ServiceConfig, engine: Engine) -> None:
        self.config = config
        self.engine = engine
        self._server = _uvicorn(config, engine)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    def start(self, timeout: float = 10.0) -> ServiceHandle:
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if not self._thread.is_alive() or time.monotonic() > deadline:
                raise BindFailure(f"service did not start on {self.url}")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    def __enter__(self) -> ServiceHandle:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def start_in_thread(config: ServiceConfig, engine: Engine | None = None) -> ServiceHandle:
    config.validate()
    if engine is None:
        engine = Engine.from_paths(config.policy, config.corpus, config.audit)
    _check_bind(config.host, config.port)
    return ServiceHandle(config, engine).start()
