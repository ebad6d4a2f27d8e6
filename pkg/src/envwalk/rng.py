"""Deterministic, replayable random streams for replica-parallel experiments.

Every draw in the package comes from a named stream obtained by
:func:`stream`. A stream is identified by a 64-bit master seed plus a path of
labels (experiment name, replica index, history index, ...). The label path
is serialized injectively, hashed with SHA-256, and the digest keys a Philox
counter-based generator. Consequences:

* distinct label paths yield independent streams (a collision would be a
  SHA-256 collision),
* a stream's output depends only on (master seed, label path), never on
  thread count or batching, so experiments are bit-reproducible,
* any stream (one environment history, one walk) can be replayed alone.

Batched drivers give each fixed-size chunk of replicas its own stream; the
chunk size is part of the run configuration, so parallel execution cannot
change any drawn value.
"""

from __future__ import annotations

import hashlib

import numpy as np

Label = int | str

_MASK64 = (1 << 64) - 1


def _encode(master_seed: int, labels: tuple[Label, ...]) -> bytes:
    """Injective byte encoding of (seed, label path)."""
    parts = [b"seed:%d" % (master_seed & _MASK64)]
    for lab in labels:
        if isinstance(lab, bool) or not isinstance(lab, (int, str)):
            raise TypeError(f"stream labels must be int or str, got {lab!r}")
        if isinstance(lab, int):
            parts.append(b"i%d" % lab)
        else:
            enc = lab.encode("utf-8")
            parts.append(b"s%d:%s" % (len(enc), enc))
    return b"\x1f".join(parts)


def derive_key(master_seed: int, *labels: Label) -> np.ndarray:
    """128-bit Philox key for the stream named by ``labels``."""
    digest = hashlib.sha256(_encode(master_seed, labels)).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def stream(master_seed: int, *labels: Label) -> np.random.Generator:
    """Counter-based generator for the stream named by ``labels``."""
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, *labels)))


def pick(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) through the rows of a stochastic array.

    ``probs`` has shape (..., m) with rows summing to 1; ``u`` has shape
    (...,). Returns integer indices in [0, m). Inversion uses the cumulative
    distribution in index order, so results are reproducible across batch
    layouts.
    """
    cdf = np.cumsum(probs, axis=-1)
    idx = np.sum(u[..., None] >= cdf, axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
