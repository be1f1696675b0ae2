"""Checkpoints as flat npz archives with a JSON sidecar manifest.

Layout: <stem>.npz holds one array per key ("model/<param>" for module
parameters and buffers, "optim/<idx>/<stat>" for optimizer state tensors);
<stem>.json records step, config snapshot, per-key shapes/dtypes and the
optimizer param groups. No pickled objects anywhere, so archives are safe
to load from untrusted sources and stable across library versions.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

FORMAT_VERSION = 1


def _stem(path) -> Path:
    p = Path(path)
    if p.suffix in (".npz", ".json"):
        p = p.with_suffix("")
    return p


def save_checkpoint(path, model: torch.nn.Module,
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    step: int = 0, config: Optional[dict] = None) -> Path:
    """Write <stem>.npz + <stem>.json; returns the npz path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, tensor in model.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().cpu().numpy()
    optim_groups = None
    if optimizer is not None:
        state = optimizer.state_dict()
        for idx, stats in state["state"].items():
            for key, value in stats.items():
                if isinstance(value, torch.Tensor):
                    arrays[f"optim/{idx}/{key}"] = value.detach().cpu().numpy()
                else:
                    arrays[f"optim/{idx}/{key}"] = np.asarray(value)
        optim_groups = state["param_groups"]
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "config": config or {},
        "keys": {
            k: {"shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in sorted(arrays.items())
        },
        "optim_param_groups": optim_groups,
    }
    np.savez(stem.with_suffix(".npz"), **arrays)
    with open(stem.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stem.with_suffix(".npz")


def read_manifest(path) -> dict:
    with open(_stem(path).with_suffix(".json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_checkpoint(path, model: torch.nn.Module,
                    optimizer: Optional[torch.optim.Optimizer] = None
                    ) -> Tuple[int, dict]:
    """Restore model (strict) and optionally optimizer; returns (step, config)."""
    stem = _stem(path)
    manifest = read_manifest(stem)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    with np.load(stem.with_suffix(".npz")) as archive:
        model_state = {}
        optim_state = {}
        for key in archive.files:
            kind, _, rest = key.partition("/")
            if kind == "model":
                model_state[rest] = torch.from_numpy(archive[key])
            elif kind == "optim":
                idx, _, stat = rest.partition("/")
                optim_state.setdefault(int(idx), {})[stat] = torch.from_numpy(
                    archive[key]
                )
    missing = set(model.state_dict()) - set(model_state)
    unexpected = set(model_state) - set(model.state_dict())
    if missing or unexpected:
        raise ValueError(
            f"checkpoint keys do not match model: missing={sorted(missing)[:4]} "
            f"unexpected={sorted(unexpected)[:4]}"
        )
    model.load_state_dict(model_state)
    if optimizer is not None and manifest.get("optim_param_groups") is not None:
        optimizer.load_state_dict({
            "state": optim_state,
            "param_groups": manifest["optim_param_groups"],
        })
    return manifest["step"], manifest.get("config", {})
