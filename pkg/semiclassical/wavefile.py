"""
SCWF binary wavefunction files.

Layout (little endian): magic b"SCWF", u32 version, u32 N_R, u32 N_theta,
four f64 grid bounds (R_min, R_max, theta_min, theta_max), then N_R * N_theta
complex128 amplitudes with R running fastest.
"""

from pathlib import Path
import json
import logging

import numpy as np

from semiclassical.exceptions import ConfigError, GridError
from semiclassical.qgrid import Wavefunction

logger = logging.getLogger(__name__)

MAGIC = b"SCWF"
VERSION = 1
HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("n_r", "<u4"),
        ("n_theta", "<u4"),
        ("bounds", "<f8", (4,)),
    ]
)


def write_wavefunction(path, psi, metadata=None):
    """Write ``psi`` as SCWF; ``metadata`` goes to a sibling .json file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = psi.grid
    header = np.zeros(1, dtype=HEADER)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["n_r"] = grid.n_r
    header["n_theta"] = grid.n_theta
    header["bounds"] = grid.bounds()
    with path.open("wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(psi.values.T).astype("<c16").tobytes())
    if metadata is not None:
        path.with_suffix(".json").write_text(json.dumps(metadata, indent=2, sort_keys=True))
    logger.debug(f"wrote {grid.n_r}x{grid.n_theta} wavefunction to {path}")
    return path


def read_header(path):
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.itemsize:
        raise ConfigError(f"{path}: truncated SCWF header")
    header = np.frombuffer(raw[: HEADER.itemsize], dtype=HEADER)[0]
    if bytes(header["magic"]) != MAGIC:
        raise ConfigError(f"{path}: not an SCWF file (magic {bytes(header['magic'])!r})")
    if int(header["version"]) != VERSION:
        raise ConfigError(f"{path}: unsupported SCWF version {int(header['version'])}")
    return header, raw[HEADER.itemsize:]


def read_amplitudes(path):
    """(amplitudes with shape (N_R, N_theta), bounds) without a GridSpec."""
    header, body = read_header(path)
    n_r, n_theta = int(header["n_r"]), int(header["n_theta"])
    expected = n_r * n_theta * 16
    if len(body) != expected:
        raise ConfigError(f"{path}: expected {expected} amplitude bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<c16").reshape(n_theta, n_r).T.astype(complex)
    return values, tuple(float(b) for b in header["bounds"])


def read_wavefunction(path, grid):
    """Load an SCWF file onto ``grid``, which must match its shape and bounds."""
    values, bounds = read_amplitudes(path)
    if values.shape != grid.shape or not np.allclose(bounds, grid.bounds(), rtol=0.0, atol=1e-12):
        raise GridError(
            f"{path}: stored grid {values.shape} {bounds} does not match {grid.shape} {grid.bounds()}"
        )
    return Wavefunction(values, grid)
