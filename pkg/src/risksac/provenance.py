"""Seed splitting and content hashes stamped into every output file."""
from __future__ import annotations

import hashlib
import json
from importlib import resources


def derive_seed(master_seed: int, label: str) -> int:
    """Stream seed for ``label`` under ``master_seed``.

    The first eight bytes of ``sha256(f"{master_seed}/{label}")`` read as a
    big-endian integer and reduced mod 2**32. Distinct labels give
    independent-looking streams, and the mapping is stable across processes
    and platforms (unlike ``hash``).
    """
    digest = hashlib.sha256(f"{int(master_seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 2**32


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(obj):
    if isinstance(obj, tuple):
        return list(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def content_hash(obj, length: int = 16) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]


_CODE_VERSION: str | None = None


def code_version(length: int = 12) -> str:
    """Hash of the installed package sources and bundled data."""
    global _CODE_VERSION
    if _CODE_VERSION is None:
        h = hashlib.sha256()
        root = resources.files("risksac")
        files = sorted(
            (p for p in _walk(root) if p.name.endswith((".py", ".json"))),
            key=lambda p: str(p),
        )
        for p in files:
            h.update(str(p.relative_to(root) if hasattr(p, "relative_to") else p.name).encode())
            h.update(p.read_bytes())
        _CODE_VERSION = h.hexdigest()
    return _CODE_VERSION[:length]


def _walk(node):
    for child in node.iterdir():
        if child.is_dir():
            if child.name != "__pycache__":
                yield from _walk(child)
        else:
            yield child
