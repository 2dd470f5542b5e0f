"""Named, splittable random streams derived from one 64-bit run seed.

Philox (counter-based) keyed by an FNV mix of (seed, stream label) gives
independent, portable, bit-reproducible streams: one for sample selection,
one for arrival times, one for compliance subsampling, plus per-run seeds
for the repeated server protocol. Alternate-seed audits and trace
reproducibility both depend on these derivations staying fixed.
"""
from __future__ import annotations

import numpy as np

from .digest import mix64

STREAM_SAMPLES = "samples"
STREAM_ARRIVALS = "arrivals"
STREAM_COMPLIANCE = "compliance"


def stream(seed: int, label: str, *extra: int | str) -> np.random.Generator:
    """A Generator for the named stream of `seed`."""
    return np.random.Generator(np.random.Philox(key=mix64(seed, label, *extra)))


def samples_stream(seed: int) -> np.random.Generator:
    return stream(seed, STREAM_SAMPLES)


def arrivals_stream(seed: int) -> np.random.Generator:
    return stream(seed, STREAM_ARRIVALS)


def compliance_stream(seed: int) -> np.random.Generator:
    return stream(seed, STREAM_COMPLIANCE)


def per_run_seed(seed: int, run_index: int) -> int:
    """Derived seed for run `run_index` of a multi-run protocol."""
    return mix64(seed, "run", run_index)
