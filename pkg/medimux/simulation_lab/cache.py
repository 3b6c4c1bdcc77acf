"""
On-disk cache of counterfactual tables keyed by (spec digest, size, seed).

File layout: the magic bytes ``MDXT1``, a 4-byte big-endian header length,
a UTF-8 JSON header and an ``np.savez`` archive of the table arrays.
"""
import io
import json
import logging
import os
from pathlib import Path

import numpy as np

from medimux.exceptions import ConfigError
from medimux.simulation_lab.table import (
    CounterfactualTable,
    generate_counterfactual_table,
)

logger = logging.getLogger(__name__)

MAGIC = b"MDXT1"
HEADER_BYTES = 4
ARRAYS = ("t", "m0", "m1", "noise", "x", "u")


def cache_path(cache_dir, spec, n_rows, seed):
    return Path(cache_dir) / f"truth-{spec.digest()[:16]}-{n_rows}-{seed}.mdxt"


def write_table(path, table):
    path = Path(path)
    header = json.dumps(
        {"spec_digest": table.spec.digest(), "n_rows": table.n_rows, "seed": table.seed}
    ).encode("utf-8")
    arrays = {name: getattr(table, name) for name in ARRAYS}
    if arrays["u"] is None:
        arrays["u"] = np.zeros(0)

    buffer = io.BytesIO()
    np.savez(buffer, **arrays)

    partial = path.with_name(path.name + ".part")
    with open(partial, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(HEADER_BYTES, "big"))
        f.write(header)
        f.write(buffer.getvalue())
    os.replace(partial, path)


def read_table(path, spec):
    """Load a cached table, refusing files written for another spec."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path} is not a medimux truth cache file")
        header_length = int.from_bytes(f.read(HEADER_BYTES), "big")
        header = json.loads(f.read(header_length).decode("utf-8"))
        payload = f.read()

    if header["spec_digest"] != spec.digest():
        raise ConfigError(f"{path} was written for a different simulation spec")

    with np.load(io.BytesIO(payload), allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in ARRAYS}
    if arrays["u"].size == 0:
        arrays["u"] = None
    return CounterfactualTable(spec=spec, seed=header["seed"], **arrays)


def load_or_generate(spec, n_rows, seed, cache_dir=None):
    """Cached table for (spec, n_rows, seed), generated and stored on a miss."""
    if not cache_dir:
        return generate_counterfactual_table(spec, n_rows, seed)

    path = cache_path(cache_dir, spec, n_rows, seed)
    if path.exists():
        logger.info(f"Loading counterfactual table from {path}")
        return read_table(path, spec)

    table = generate_counterfactual_table(spec, n_rows, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_table(path, table)
    logger.info(f"Cached counterfactual table at {path}")
    return table
