"""Byte-reproducible binary artifacts and file hashing."""

from __future__ import annotations

import hashlib
import io
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz(path, arrays: dict, compress: bool = True) -> None:
    """Like ``np.savez`` but with fixed zip timestamps and member order, so
    equal arrays always give equal bytes.  Readable with ``np.load``."""
    method = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(path, "w", compression=method) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = method
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(directory, name: str = "manifest.txt") -> Path:
    """List ``sha256  relative/path`` for every file under ``directory``."""
    directory = Path(directory)
    lines = []
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name != name:
            lines.append(f"{sha256_file(p)}  {p.relative_to(directory).as_posix()}")
    out = directory / name
    out.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return out
