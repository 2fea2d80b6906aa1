"""Atomic units with cm-1 conversion at the I/O boundary (hbar = 1)."""

import numpy as np
from scipy.constants import physical_constants

HARTREE_TO_CM = physical_constants["hartree-inverse meter relationship"][0] / 100.0
AMU_TO_ME = 1.0 / physical_constants["electron mass in u"][0]

HBAR = 1.0

# Isotopic masses in u (7Li, 12C, 14N).
MASS_LI7 = 7.0160034366
MASS_C12 = 12.0
MASS_N14 = 14.0030740048

LICN_RE = 2.186


def to_cm(energy):
    return np.asarray(energy) * HARTREE_TO_CM if np.ndim(energy) else float(energy) * HARTREE_TO_CM


def from_cm(energy):
    return np.asarray(energy) / HARTREE_TO_CM if np.ndim(energy) else float(energy) / HARTREE_TO_CM


def licn_reduced_masses():
    """(mu1, mu2) for Li-CN in electron masses."""
    m_cn = MASS_C12 + MASS_N14
    m_licn = MASS_LI7 + m_cn
    mu1 = MASS_LI7 * m_cn / m_licn
    mu2 = MASS_C12 * MASS_N14 / m_cn
    return mu1 * AMU_TO_ME, mu2 * AMU_TO_ME
