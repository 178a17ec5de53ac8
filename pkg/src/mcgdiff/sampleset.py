"""Sample container shared by the samplers, the analytic oracles, and the
evaluation code, with its CSV wire format."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SampleSet:
    """N samples in R^d plus a provenance label (sampler name, seed, ...)."""

    rows: np.ndarray
    label: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D (N, d) array")
        if not np.all(np.isfinite(rows)):
            raise ValueError("samples must be finite")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def samples_to_csv(samples: SampleSet) -> str:
    buf = io.StringIO()
    buf.write(",".join(f"x{i}" for i in range(samples.dim)) + "\n")
    np.savetxt(buf, samples.rows, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def samples_from_csv(text: str, label: str = "") -> SampleSet:
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    if header != [f"x{i}" for i in range(len(header))]:
        raise ValueError("unexpected sample CSV header")
    rows = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    return SampleSet(rows=rows, label=label)


def save_samples(samples: SampleSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(samples_to_csv(samples))


def load_samples(path, label: str = "") -> SampleSet:
    with open(path, "r", encoding="utf-8") as fh:
        return samples_from_csv(fh.read(), label=label)
