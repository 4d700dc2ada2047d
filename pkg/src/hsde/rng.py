"""Deterministic random-stream derivation.

Every Monte Carlo routine in this package takes an explicit stream.  Streams
are derived from a 64-bit master seed plus a label path through a
counter-based generator (Philox), so that

* the same ``(master_seed, labels...)`` always yields the same stream,
* distinct label paths yield statistically independent streams,
* ensembles can be scheduled serially or across workers with identical
  results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_key", "substream", "StreamLog"]


def stream_key(master_seed: int, *labels) -> int:
    """128-bit Philox key derived by hashing the seed and label path."""
    h = hashlib.sha256()
    h.update(b"hsde-stream")
    h.update(int(master_seed).to_bytes(8, "little", signed=False))
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Independent generator for the given label path."""
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, *labels)))


class StreamLog:
    """Audit log of derived streams; flags any key reuse."""

    def __init__(self):
        self._seen = {}

    def derive(self, master_seed: int, *labels) -> np.random.Generator:
        key = stream_key(master_seed, *labels)
        label = "/".join(str(v) for v in labels)
        prior = self._seen.get(key)
        if prior is not None and prior != label:
            raise RuntimeError(f"stream key collision: {label!r} vs {prior!r}")
        self._seen[key] = label
        return np.random.Generator(np.random.Philox(key=key))

    def entries(self):
        return [{"label": lab, "key": f"{key:032x}"} for key, lab in sorted(self._seen.items(), key=lambda kv: kv[1])]
