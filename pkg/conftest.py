"""Shared fixtures: harmonic and surrogate surfaces, small grids, in-memory artifact store, eager Celery."""

import numpy as np
import pytest

from semiclassical.dynamics import PhasePoint
from semiclassical.pes import SurrogatePes, minimum_energy_path
from semiclassical.qgrid import GridSpec
from semiclassical.selftest import HarmonicSuite, harmonic_fixture

LOCMEM_ARTIFACTS = {
    "BACKEND": "django.core.cache.backends.locmem.LocMemCache",
    "LOCATION": "scarbasis-tests",
    "TIMEOUT": None,
    "OPTIONS": {"MAX_ENTRIES": 100000},
}


@pytest.fixture(autouse=True)
def artifact_store(settings):
    """Every test gets an empty in-memory artifact cache and eager Celery."""
    from django.core.cache import caches
    from scarbasis.celery import app

    settings.CACHES = {
        "default": {"BACKEND": "django.core.cache.backends.locmem.LocMemCache"},
        "artifacts": LOCMEM_ARTIFACTS,
    }
    app.conf.task_always_eager = True
    app.conf.task_eager_propagates = True
    caches["artifacts"].clear()
    yield caches["artifacts"]
    caches["artifacts"].clear()


@pytest.fixture(scope="session")
def harmonic_pes():
    return harmonic_fixture()


@pytest.fixture(scope="session")
def harmonic_mep(harmonic_pes):
    return minimum_energy_path(harmonic_pes)


@pytest.fixture(scope="session")
def harmonic_alpha(harmonic_pes):
    return harmonic_pes.packet_widths()


@pytest.fixture(scope="session")
def harmonic_grid(harmonic_pes):
    return GridSpec.for_pes(harmonic_pes, 64, 128)


@pytest.fixture(scope="session")
def small_grid(harmonic_pes):
    return GridSpec.for_pes(harmonic_pes, 32, 32)


@pytest.fixture(scope="session")
def harmonic_suite():
    """Suite with its families continued once per session."""
    return HarmonicSuite(e_top=4500.0)


@pytest.fixture(scope="session")
def surrogate_pes():
    return SurrogatePes()


@pytest.fixture(scope="session")
def surrogate_mep(surrogate_pes):
    return minimum_energy_path(surrogate_pes)


@pytest.fixture(scope="session")
def surrogate_grid(surrogate_pes):
    return GridSpec.for_pes(surrogate_pes, 64, 64)


@pytest.fixture
def linear_seed(surrogate_mep):
    """Phase point on the linear Li-NC side (theta = pi), at rest on the MEP."""
    return PhasePoint(surrogate_mep.re(np.pi), np.pi)


@pytest.fixture
def run_document(tmp_path):
    """Small run configuration writing into a temporary directory."""
    return {
        "output_dir": str(tmp_path / "run"),
        "grid": {"n_r": 32, "n_theta": 32},
    }


@pytest.fixture(scope="session")
def harmonic_density(harmonic_pes):
    from semiclassical.sgsm import DensityOfStates

    return DensityOfStates.fit(harmonic_pes, 12000.0)


@pytest.fixture(scope="session")
def exact_pool(harmonic_pes, harmonic_grid):
    """Exact product eigenstates dressed as tube states, dispersions 1, 2, 3, ... cm-1."""
    from semiclassical.qgrid import LocalizedState
    from semiclassical.selftest import exact_energy, exact_state

    quanta = [(0, 0), (0, 2), (0, 4), (1, 0), (0, 6), (1, 2), (0, 8), (1, 4)]
    return [
        LocalizedState(
            wavefunction=exact_state(harmonic_pes, harmonic_grid, n_r, n_theta),
            kind="tube",
            label=f"H_{n_r}",
            n=n_theta,
            bs_energy=exact_energy(n_r, n_theta),
            mean_energy=exact_energy(n_r, n_theta),
            dispersion=1.0 + k,
        )
        for k, (n_r, n_theta) in enumerate(quanta)
    ]


@pytest.fixture
def harmonic_document(tmp_path, harmonic_pes):
    """Harmonic surface as a PES file plus a run configuration seeded on its two families."""
    pes_path = harmonic_pes.dump(tmp_path / "harmonic.json")
    return {
        "pes_path": str(pes_path),
        "output_dir": str(tmp_path / "harmonic-run"),
        "grid": {"n_r": 64, "n_theta": 128},
        "po": {
            "seeds": [
                {"theta": float(np.pi), "R": 4.35, "energy": 1000.0, "strategy": "stretch", "label": "S"},
                {"theta": float(np.pi), "R": 4.35, "p_theta": 1.0, "energy": 1000.0, "strategy": "symmetric",
                 "label": "B"},
            ],
            "e_max": 4000.0,
            "step": 250.0,
            "alpha": list(harmonic_pes.packet_widths()),
            "section_scan": 0,
        },
        "selection": {"e_ref": 3100.0},
        "analysis": {"reference_states": 8, "certify": False},
    }
