"""Environment client: newline-delimited JSON over TCP, one session per socket."""

from __future__ import annotations

import json
import socket
from collections import deque

import numpy as np


class ProtocolDesyncError(RuntimeError):
    """The server sent something other than a well-formed reply.

    Carries a transcript of the most recent exchanges so the failure is
    diagnosable after the connection is gone.
    """

    def __init__(self, message: str, transcript):
        self.transcript = list(transcript)
        body = "\n".join(self.transcript) or "(empty)"
        super().__init__(f"{message}\n--- last exchanges ---\n{body}")


class EnvClient:
    """One environment session speaking the reset/step/close commands.

    Every request is a single JSON line; every reply must be a single JSON
    object. Anything else — a dropped connection, unparseable bytes, a reply
    missing required fields, or a server-side error — raises
    ``ProtocolDesyncError`` with the recent transcript attached.
    """

    def __init__(self, host: str, port: int, timeout: float = 60.0,
                 transcript_len: int = 16):
        self._log: deque[str] = deque(maxlen=transcript_len)
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def _roundtrip(self, msg: dict) -> dict:
        line = json.dumps(msg)
        self._log.append(">> " + line)
        self._file.write(line.encode("utf-8") + b"\n")
        self._file.flush()
        raw = self._file.readline()
        if not raw:
            raise ProtocolDesyncError("connection closed mid-session", self._log)
        text = raw.decode("utf-8", errors="replace").strip()
        self._log.append("<< " + text)
        try:
            reply = json.loads(text)
        except json.JSONDecodeError as e:
            raise ProtocolDesyncError(f"unparseable reply: {e}", self._log) from e
        if not isinstance(reply, dict):
            raise ProtocolDesyncError("reply is not a JSON object", self._log)
        if "error" in reply:
            raise ProtocolDesyncError(f"server error: {reply['error']}", self._log)
        return reply

    def reset(self, seed: int | None = None, alpha: float | None = None) -> np.ndarray:
        msg: dict = {"cmd": "reset"}
        if seed is not None:
            msg["seed"] = int(seed)
        if alpha is not None:
            msg["alpha"] = float(alpha)
        reply = self._roundtrip(msg)
        if "obs" not in reply:
            raise ProtocolDesyncError("reset reply missing obs", self._log)
        return np.asarray(reply["obs"], dtype=float)

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        action = np.asarray(action, dtype=float).reshape(3)
        reply = self._roundtrip({"cmd": "step", "action": action.tolist()})
        missing = [k for k in ("obs", "reward", "done") if k not in reply]
        if missing:
            raise ProtocolDesyncError(
                f"step reply missing {', '.join(missing)}", self._log)
        obs = np.asarray(reply["obs"], dtype=float)
        return obs, float(reply["reward"]), bool(reply["done"]), reply.get("info", {})

    def close(self) -> None:
        try:
            self._file.write(b'{"cmd": "close"}\n')
            self._file.flush()
            self._file.readline()
        except (OSError, ValueError):
            pass
        finally:
            self._file.close()
            self._sock.close()

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
