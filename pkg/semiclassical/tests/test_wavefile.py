import json

import numpy as np
import pytest

from semiclassical.dynamics import PhasePoint
from semiclassical.exceptions import ConfigError, GridError
from semiclassical.qgrid import GridSpec, frozen_gaussian
from semiclassical.wavefile import HEADER, MAGIC, read_amplitudes, read_header, read_wavefunction, \
    write_wavefunction


@pytest.fixture
def packet(harmonic_pes, small_grid):
    return frozen_gaussian(small_grid, PhasePoint(harmonic_pes.r0 + 0.1, 2.7, 1.0, 0.5)).normalized()


class TestWriteWavefunction:
    def test_layout(self, packet, tmp_path):
        path = write_wavefunction(tmp_path / "states" / "tube.scwf", packet)
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        assert len(raw) == HEADER.itemsize + 32 * 32 * 16
        # R runs fastest: the second stored amplitude is (R_1, theta_0)
        second = np.frombuffer(raw[HEADER.itemsize + 16:HEADER.itemsize + 32], dtype="<c16")[0]
        assert second == packet.values[1, 0]

    def test_metadata_sidecar(self, packet, tmp_path):
        path = write_wavefunction(tmp_path / "tube.scwf", packet, {"label": "S_π", "n": 2})
        assert json.loads(path.with_suffix(".json").read_text()) == {"label": "S_π", "n": 2}

    def test_read_back_on_same_grid(self, packet, small_grid, tmp_path):
        path = write_wavefunction(tmp_path / "tube.scwf", packet)
        np.testing.assert_array_equal(read_wavefunction(path, small_grid).values, packet.values)
        values, bounds = read_amplitudes(path)
        assert values.shape == (32, 32)
        assert bounds == small_grid.bounds()


class TestReadErrors:
    def test_grid_mismatch(self, packet, harmonic_pes, tmp_path):
        path = write_wavefunction(tmp_path / "tube.scwf", packet)
        with pytest.raises(GridError):
            read_wavefunction(path, GridSpec.for_pes(harmonic_pes, 32, 64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.scwf"
        path.write_bytes(b"WAVE" + bytes(HEADER.itemsize))
        with pytest.raises(ConfigError):
            read_header(path)

    def test_truncated(self, packet, tmp_path):
        path = write_wavefunction(tmp_path / "tube.scwf", packet)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ConfigError):
            read_amplitudes(path)

    def test_unsupported_version(self, packet, tmp_path):
        path = write_wavefunction(tmp_path / "tube.scwf", packet)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (7).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(ConfigError):
            read_header(path)
