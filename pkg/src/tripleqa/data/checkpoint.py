"""Checkpoint directories: one tensor file per named parameter plus manifest.json."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensorfile import read_tensor_file, write_tensor_file

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _file_name(name: str) -> str:
    return name + ".tnsr"


def save_checkpoint(params: dict[str, np.ndarray], cfg: dict, path, extra: dict | None = None,
                    buffers: dict[str, np.ndarray] | None = None) -> Path:
    """Write ``params`` (name → array) and ``cfg`` under directory ``path``."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(params):
        arr = np.asarray(params[name])
        write_tensor_file(path / "params" / _file_name(name), arr, {"name": name})
        entries.append({"name": name, "shape": list(arr.shape), "file": "params/" + _file_name(name)})
    buffer_entries = []
    for name in sorted(buffers or {}):
        arr = np.asarray(buffers[name], dtype=np.float64)
        write_tensor_file(path / "params" / _file_name(name), arr, {"name": name, "buffer": True})
        buffer_entries.append({"name": name, "shape": list(arr.shape), "file": "params/" + _file_name(name)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "parameters": entries,
        "buffers": buffer_entries,
        **(extra or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path} has no manifest.json") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    return manifest


def load_checkpoint(path, expected_cfg: dict | None = None):
    """Return ``(params, cfg, manifest, buffers)``.

    When ``expected_cfg`` is given, every key it shares with the stored
    configuration must match exactly.
    """
    path = Path(path)
    manifest = read_manifest(path)
    cfg = manifest["config"]
    if expected_cfg is not None:
        for key, want in expected_cfg.items():
            if key in cfg and cfg[key] != want:
                raise CheckpointError(f"{path}: config {key}={cfg[key]!r} but {want!r} was requested")

    def load_entries(entries):
        out = {}
        for entry in entries:
            file = path / entry["file"]
            if not file.is_file():
                raise CheckpointError(f"{path}: missing file for parameter '{entry['name']}' ({entry['file']})")
            arr = read_tensor_file(file)
            if list(arr.shape) != entry["shape"]:
                raise CheckpointError(
                    f"{path}: parameter '{entry['name']}' has shape {list(arr.shape)}, manifest says {entry['shape']}"
                )
            out[entry["name"]] = arr
        return out

    return load_entries(manifest["parameters"]), cfg, manifest, load_entries(manifest.get("buffers", []))


def save_module(model, cfg: dict, path, extra: dict | None = None) -> Path:
    params = {name: p.data for name, p in model.named_parameters()}
    buffers = dict(model.named_buffers())
    return save_checkpoint(params, cfg, path, extra, buffers)


def load_into(model, path, expected_cfg: dict | None = None) -> dict:
    """Load a checkpoint into an already constructed ``model``; returns the manifest."""
    params, _, manifest, buffers = load_checkpoint(path, expected_cfg)
    own = dict(model.named_parameters())
    for name, p in own.items():
        if name not in params:
            raise CheckpointError(f"{path}: checkpoint lacks parameter '{name}'")
        if params[name].shape != p.shape:
            raise CheckpointError(
                f"{path}: parameter '{name}' has shape {params[name].shape}, model expects {p.shape}"
            )
    state = {**params, **buffers}
    model.load_state_dict(state)
    return manifest
