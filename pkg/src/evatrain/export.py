"""Weight-file writer and reader for the versioned JSON policy format.

The document layout — key order, default JSON separators, float repr, one
trailing newline — is pinned so that a file written here and the same
content re-serialized by the consuming side are byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch
from torch import nn

from .nets import Actor

WEIGHT_FORMAT_VERSION = 1


class ExportError(ValueError):
    """Raised when the network state cannot be exported as a valid file."""


def weight_document(actor: Actor) -> dict:
    """Extract the actor's linear layers into the export document.

    Refuses to serialize anything that the consumer would reject: non-finite
    parameters, a head that is not 6-wide, an input width that does not
    decompose into the 9 + 3*history observation layout, or a degenerate
    normalization.
    """
    linears = [m for m in actor.net if isinstance(m, nn.Linear)]
    if not linears:
        raise ExportError("actor has no linear layers")
    weights = [m.weight.detach().cpu().numpy().astype(float) for m in linears]
    biases = [m.bias.detach().cpu().numpy().astype(float) for m in linears]
    arch = [weights[0].shape[1]] + [W.shape[0] for W in weights]
    if arch[-1] != 6:
        raise ExportError(f"policy head must be 6-wide, got {arch[-1]}")
    obs_dim = arch[0]
    if obs_dim < 9 or (obs_dim - 9) % 3 != 0:
        raise ExportError(f"input width {obs_dim} does not fit 9 + 3*history")
    for k, (W, b) in enumerate(zip(weights, biases)):
        if W.shape != (arch[k + 1], arch[k]) or b.shape != (arch[k + 1],):
            raise ExportError(f"layer {k} has inconsistent shape")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ExportError(f"layer {k} contains non-finite parameters")
    obs_mean = actor.obs_mean.detach().cpu().numpy().astype(float)
    obs_std = actor.obs_std.detach().cpu().numpy().astype(float)
    if obs_mean.shape != (obs_dim,) or obs_std.shape != (obs_dim,):
        raise ExportError("normalization vectors must match the input width")
    if not (np.all(np.isfinite(obs_mean)) and np.all(np.isfinite(obs_std))):
        raise ExportError("normalization contains non-finite values")
    if np.any(obs_std <= 0):
        raise ExportError("normalization std must be positive")
    if not (np.isfinite(actor.action_scale) and actor.action_scale > 0):
        raise ExportError("action scale must be positive and finite")
    return {
        "version": WEIGHT_FORMAT_VERSION,
        "arch": [int(a) for a in arch],
        "weights": [W.tolist() for W in weights],
        "biases": [b.tolist() for b in biases],
        "action_scale": float(actor.action_scale),
        "obs_norm": {"mean": obs_mean.tolist(), "std": obs_std.tolist()},
        "history_n": (obs_dim - 9) // 3,
    }


def export_weights(actor: Actor, path: str | os.PathLike) -> None:
    doc = weight_document(actor)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_actor(path: str | os.PathLike) -> Actor:
    """Rebuild an actor from an exported file (the exporter's inverse)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or doc.get("version") != WEIGHT_FORMAT_VERSION:
        raise ExportError("unsupported or malformed weight file")
    arch = [int(a) for a in doc["arch"]]
    actor = Actor(arch[0], arch[1:-1], float(doc["action_scale"]),
                  doc["obs_norm"]["mean"], doc["obs_norm"]["std"])
    linears = [m for m in actor.net if isinstance(m, nn.Linear)]
    with torch.no_grad():
        for m, W, b in zip(linears, doc["weights"], doc["biases"]):
            m.weight.copy_(torch.as_tensor(np.asarray(W, dtype=float)))
            m.bias.copy_(torch.as_tensor(np.asarray(b, dtype=float)))
    return actor
