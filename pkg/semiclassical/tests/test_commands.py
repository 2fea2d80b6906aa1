import csv
import io
import json

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError


def run(name, *args):
    out, err = io.StringIO(), io.StringIO()
    call_command(name, *args, stdout=out, stderr=err)
    return out.getvalue(), err.getvalue()


@pytest.fixture
def config_file(tmp_path, run_document):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(run_document))
    return path


class TestPesInfo:
    def test_stationary_points_csv(self, config_file, tmp_path):
        out, _ = run("pes_info", "--config", str(config_file))
        rows = list(csv.DictReader(io.StringIO(out)))
        assert {"R", "theta", "energy_cm", "classification"} <= set(rows[0])
        assert rows[0]["classification"] == "minimum"
        assert (tmp_path / "run" / "manifest.json").exists()

    def test_mep_csv(self, config_file):
        out, _ = run("pes_info", "--config", str(config_file), "--mep")
        assert out.splitlines()[0] == "theta,R_e,dR_e_dtheta,energy_cm"

    def test_output_flag(self, config_file, tmp_path):
        run("pes_info", "--config", str(config_file), "--output", str(tmp_path / "other"))
        assert (tmp_path / "other" / "stationary_points.json").exists()


class TestExitCodes:
    def test_invalid_override(self, config_file):
        with pytest.raises(CommandError) as info:
            run("pes_info", "--config", str(config_file), "--set", "grid.n_r=100")
        assert info.value.returncode == 2

    def test_missing_config(self, tmp_path):
        with pytest.raises(CommandError) as info:
            run("pes_info", "--config", str(tmp_path / "absent.toml"))
        assert info.value.returncode == 2

    def test_missing_pes(self, config_file, tmp_path):
        with pytest.raises(CommandError) as info:
            run("pes_info", "--config", str(config_file), "--pes", str(tmp_path / "absent.json"))
        assert info.value.returncode == 2

    def test_po_find_needs_a_seed_angle(self, config_file):
        with pytest.raises(CommandError) as info:
            run("po_find", "--config", str(config_file), "--energy", "500")
        assert info.value.returncode == 2

    def test_numerical_failure(self, config_file, tmp_path):
        with pytest.raises(CommandError) as info:
            run("po_find", "--config", str(config_file), "--energy", "-5000", "--theta", "3.141592653589793",
                "--strategy", "stretch")
        assert info.value.returncode == 3
        stages = json.loads((tmp_path / "run" / "manifest.json").read_text())["stages"]
        assert stages[-1]["status"] == "failed"


class TestPoFind:
    def test_prints_orbit_document(self, config_file):
        out, _ = run("po_find", "--config", str(config_file), "--energy", "500", "--theta", "3.141592653589793",
                     "--strategy", "stretch", "--label", "S_π")
        document = json.loads(out)
        assert document["label"] == "S_π"
        assert document["energy_cm"] == pytest.approx(500.0)
        assert document["stable"] in (True, False)


class TestSos:
    def test_section_points_written(self, config_file, tmp_path):
        out, _ = run("sos", "--config", str(config_file), "--energy", "1000", "--launches", "2",
                     "--crossings", "5")
        assert "section points written" in out
        rows = list(csv.DictReader((tmp_path / "run" / "sos_1000.csv").open()))
        assert rows
        assert {r["trajectory"] for r in rows} <= {"0", "1"}


class TestReference:
    def test_uncertified_reference(self, config_file, tmp_path):
        out, err = run("reference", "--config", str(config_file), "--states", "3", "--no-certify")
        rows = list(csv.DictReader(io.StringIO(out)))
        energies = [float(r["energy_cm"]) for r in rows]
        assert len(energies) == 3
        assert energies == sorted(energies)
        assert "not certified" in err
        assert (tmp_path / "run" / "reference" / "0000.scwf").exists()


@pytest.mark.slow
class TestHarmonicCommands:
    @pytest.fixture
    def harmonic_file(self, tmp_path, harmonic_document):
        path = tmp_path / "harmonic-run.json"
        path.write_text(json.dumps(harmonic_document))
        return path

    def test_quantize(self, harmonic_file):
        out, _ = run("quantize", "--config", str(harmonic_file))
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rows
        assert all(float(r["energy_cm"]) <= 4000.0 for r in rows)

    def test_run(self, harmonic_file):
        out, _ = run("run", "--config", str(harmonic_file))
        document = json.loads(out)
        assert document["checks"]["matched_states"] >= 5

    def test_selftest(self, tmp_path):
        out, _ = run("selftest", "--output", str(tmp_path / "selftest"))
        assert "FAILED" not in out
        checks = json.loads((tmp_path / "selftest" / "selftest.json").read_text())
        assert all(c["passed"] for c in checks)


class TestModuleEntryPoint:
    def test_hyphenated_subcommand(self, config_file, capsys):
        from scarbasis.__main__ import main

        main(["scarbasis", "pes-info", "--config", str(config_file)])
        assert "classification" in capsys.readouterr().out

    def test_exit_code(self, tmp_path):
        from scarbasis.__main__ import main

        with pytest.raises(SystemExit) as info:
            main(["scarbasis", "pes-info", "--config", str(tmp_path / "absent.json")])
        assert info.value.code == 2
