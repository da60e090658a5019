"""Synthetic piecewise-constant regression problems and the TVDS1 on-disk format."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .operators import integrate

FORMAT_VERSION = "TVDS1"
MANIFEST = "manifest.json"


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    A: np.ndarray
    X: np.ndarray
    U: np.ndarray
    meta: dict

    @property
    def split_index(self) -> int:
        return int(self.meta["split_index"])

    @property
    def X_train(self):
        return self.X[: self.split_index]

    @property
    def X_test(self):
        return self.X[self.split_index :]

    @property
    def U_train(self):
        return self.U[: self.split_index]

    @property
    def U_test(self):
        return self.U[self.split_index :]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def generate(n: int, k: int, m: int, s: int, snr: float, seed: int) -> Dataset:
    """Draw ``n`` noisy observations ``x = A u + eps`` of ``s``-jump signals.

    ``A`` is ``(m, k)`` standard normal. Each source ``u = L z`` where ``z``
    has ``s`` standard-normal entries at uniform positions (the offset
    coordinate included). The noise is rescaled so that
    ``||A u|| / ||eps|| == snr`` exactly. The first half is the training split.
    """
    if not 1 <= s <= k:
        raise ValueError(f"sparsity must be in [1, k], got s={s}, k={k}")
    if n < 2 or n % 2:
        raise ValueError(f"n must be a positive even count, got {n}")
    if m < 1 or k < 2:
        raise ValueError("need m >= 1 and k >= 2")
    if not snr > 0:
        raise ValueError("snr must be positive")
    rng = make_rng(seed)
    A = rng.standard_normal((m, k))
    Z = np.zeros((n, k))
    X = np.empty((n, m))
    for i in range(n):
        idx = rng.choice(k, size=s, replace=False)
        Z[i, idx] = rng.standard_normal(s)
        signal = A @ integrate(Z[i])
        noise = rng.standard_normal(m)
        noise *= np.linalg.norm(signal) / (snr * np.linalg.norm(noise))
        X[i] = signal + noise
    meta = dict(n=n, m=m, k=k, s=s, snr=float(snr), seed=int(seed), split_index=n // 2)
    return Dataset(A=A, X=X, U=integrate(Z), meta=meta)


def _write(path: Path, arr):
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)


def _read(path: Path, shape):
    if not path.exists():
        raise DatasetFormatError(f"missing file {path}")
    arr = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise DatasetFormatError(f"{path.name}: {arr.size} values, manifest implies {expected}")
    return arr.reshape(shape).astype(float)


def save(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, **ds.meta}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write(directory / "A.f64", ds.A)
    _write(directory / "X.f64", ds.X)
    _write(directory / "U.f64", ds.U)
    return directory


def load(directory) -> Dataset:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise DatasetFormatError(f"missing manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable manifest: {exc}") from None
    version = manifest.pop("format_version", None)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version!r}, expected {FORMAT_VERSION}")
    missing = {"n", "m", "k", "s", "snr", "seed", "split_index"} - manifest.keys()
    if missing:
        raise DatasetFormatError(f"manifest lacks keys {sorted(missing)}")
    n, m, k = manifest["n"], manifest["m"], manifest["k"]
    return Dataset(
        A=_read(directory / "A.f64", (m, k)),
        X=_read(directory / "X.f64", (n, m)),
        U=_read(directory / "U.f64", (n, k)),
        meta=manifest,
    )
