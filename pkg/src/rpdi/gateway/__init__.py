"""HTTP gateway applying the early-exit policy to live logprob streams."""
from __future__ import annotations

from rpdi.gateway.app import Gateway, create_app
from rpdi.gateway.mock import MockUpstream
from rpdi.gateway.server import ServerThread, serve

__all__ = ["Gateway", "MockUpstream", "ServerThread", "create_app", "serve"]
