"""Environment wire protocol: newline-delimited JSON over TCP.

One connection is one private episode session; a threading server keeps
concurrent sessions fully isolated (each handler owns its Episode). Messages
are single objects with ``cmd`` in {reset, step, close}; replies carry the
flattened observation vector plus reward/done/info for steps. A malformed
message earns an ``error`` reply and the session carries on.
"""

from __future__ import annotations

import json
import socketserver
import threading

import numpy as np

from .env import Episode, EpisodeConfig, EpisodeProtocolError

PROTOCOL_COMMANDS = ("reset", "step", "close")


def _json_safe_info(info: dict) -> dict:
    out = {}
    for key, value in info.items():
        if key == "estimate":
            continue  # full object is session-internal; sigmas ride along below
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        elif isinstance(value, np.ndarray):
            value = value.tolist()
        out[key] = value
    est = info.get("estimate")
    if est is not None:
        out["estimate_sigma"] = [float(s) for s in est.sigma]
    return out


def handle_message(ep: Episode, raw) -> tuple[dict, bool]:
    """Apply one protocol message to ``ep``; returns (reply, keep_serving)."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        return {"error": f"malformed message: {e}"}, True
    if not isinstance(msg, dict):
        return {"error": "message must be a JSON object"}, True
    cmd = msg.get("cmd")
    if cmd not in PROTOCOL_COMMANDS:
        return {"error": f"unknown cmd {cmd!r}; expected one of {list(PROTOCOL_COMMANDS)}"}, True

    if cmd == "close":
        return {"ok": True}, False

    if cmd == "reset":
        seed = msg.get("seed")
        alpha = msg.get("alpha")
        if seed is not None and not isinstance(seed, int):
            return {"error": "seed must be an integer"}, True
        try:
            obs = ep.reset(seed=seed, alpha=alpha)
        except (TypeError, ValueError) as e:
            return {"error": f"reset failed: {e}"}, True
        return {"obs": obs.vector().tolist()}, True

    action = msg.get("action")
    try:
        obs, reward, done, info = ep.step(action)
    except EpisodeProtocolError as e:
        return {"error": str(e)}, True
    except (TypeError, ValueError) as e:
        return {"error": f"bad action: {e}"}, True
    return {
        "obs": obs.vector().tolist(),
        "reward": float(reward),
        "done": bool(done),
        "info": _json_safe_info(info),
    }, True


class _SessionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        ep = Episode(self.server.episode_config)
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            reply, keep = handle_message(ep, line)
            self.wfile.write(json.dumps(reply).encode("utf-8") + b"\n")
            self.wfile.flush()
            if not keep:
                break


class EnvServer(socketserver.ThreadingTCPServer):
    """TCP front end; ``server_address`` reports the bound (host, port)."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], episode_config: EpisodeConfig):
        self.episode_config = episode_config
        super().__init__(address, _SessionHandler)


def serve_env(host: str, port: int, episode_config: EpisodeConfig) -> EnvServer:
    """Bind and return the server; the caller decides how to run it."""
    return EnvServer((host, port), episode_config)


def serve_forever_in_thread(server: EnvServer) -> threading.Thread:
    """Convenience for tests and embedding: run the accept loop detached."""
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
