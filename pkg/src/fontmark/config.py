"""Shared plumbing: key=value config files, seeding, checkpoint containers."""

from __future__ import annotations

import hashlib
import os

import numpy as np
import torch

CHECKPOINT_VERSION = 1


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def write_kv_file(path, mapping: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(mapping))


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def seed_torch(seed: int):
    torch.manual_seed(seed)


def tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().contiguous().numpy().tobytes()


def state_dict_checksum(state_dict) -> str:
    """SHA-256 over parameter names and raw tensor bytes, in sorted key order."""
    h = hashlib.sha256()
    for key in sorted(state_dict.keys()):
        h.update(key.encode("utf-8"))
        value = state_dict[key]
        if isinstance(value, torch.Tensor):
            h.update(tensor_bytes(value))
        else:
            h.update(repr(value).encode("utf-8"))
    return h.hexdigest()


def array_checksum(arr: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_checkpoint(path, kind: str, payload: dict):
    """Write a self-describing checkpoint container (format version + kind + payload)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save({"format_version": CHECKPOINT_VERSION, "kind": kind, **payload}, path)


def load_checkpoint(path, kind: str) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint format {blob.get('format_version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    if blob.get("kind") != kind:
        raise ValueError(f"{path}: checkpoint kind {blob.get('kind')!r}, expected {kind!r}")
    return blob
