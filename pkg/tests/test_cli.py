import json
import math

import numpy as np
import pytest

from cavitybs.cli import RunManifest, main
from cavitybs.device import bs_duration
from cavitybs.program import Dataset


def run_cli(*argv):
    return main([str(a) for a in argv])


def csv(path):
    return Dataset.from_csv(path)


def test_rabi_ideal_fit(tmp_path, params):
    assert run_cli("rabi", "--mode", "ideal", "--out", tmp_path) == 0
    data = csv(tmp_path / "rabi.csv")
    assert data.columns == ["t", "P10", "P01", "P10+P01"]
    report = json.loads((tmp_path / "rabi_fit.json").read_text())
    assert report["frequency"] == pytest.approx(2 * params.g, rel=5e-3)
    assert report["g"] == pytest.approx(params.g, rel=5e-3)


def test_rabi_single_step_refuses_fit(tmp_path, capsys):
    assert run_cli("rabi", "--mode", "ideal", "--steps", 1, "--out", tmp_path) == 0
    assert len(csv(tmp_path / "rabi.csv")) == 1
    assert "error" in json.loads((tmp_path / "rabi_fit.json").read_text())
    assert "fit skipped" in capsys.readouterr().err
    # under two exchange periods: the sweep is written, the fit refused
    assert run_cli("rabi", "--mode", "ideal", "--t-max", 5, "--out", tmp_path) == 0
    assert "error" in json.loads((tmp_path / "rabi_fit.json").read_text())


def test_hom_ideal_extinction_and_revival(tmp_path, params):
    t_bs = bs_duration(params.g)
    assert run_cli("hom", "--mode", "ideal", "--t-max", 2 * t_bs, "--steps", 3, "--out", tmp_path) == 0
    p11 = csv(tmp_path / "hom.csv").column("P11")
    np.testing.assert_allclose(p11, [1, 0, 1], atol=1e-12)
    report = json.loads((tmp_path / "hom_contrast.json").read_text())
    assert report["baseline_relative"] == pytest.approx(1, abs=1e-12)


def test_hom_distinguishable_floor(tmp_path):
    assert run_cli("hom", "--mode", "ideal", "--distinguishable", "--steps", 31, "--out", tmp_path) == 0
    p11 = csv(tmp_path / "hom.csv").column("P11")
    assert p11.min() == pytest.approx(0.5, abs=1e-3)
    assert json.loads((tmp_path / "hom_contrast.json").read_text())["baseline_relative"] <= 0.5 + 1e-12


def test_overlap_grid(tmp_path):
    assert run_cli("overlap", "--alpha-max", math.sqrt(3), "--n-alpha", 4, "--n-phi", 9,
                   "--out", tmp_path) == 0
    d = csv(tmp_path / "overlap.csv").as_dict()
    np.testing.assert_allclose(d["parity_raw"], d["analytic"], atol=1e-6)
    zero_phase = d["dphi"] == 0
    np.testing.assert_allclose(d["ideal"][zero_phase], 1, atol=1e-9)
    assert d["parity_scaled"][0] == pytest.approx(0.94, abs=1e-12)


def test_mz_ideal_and_without_phase(tmp_path):
    assert run_cli("mz", "--mode", "ideal", "--steps-per-bs", 5, "--out", tmp_path / "a") == 0
    d = csv(tmp_path / "a" / "mz.csv").as_dict()
    stage, p11 = d["stage"], d["P11"]
    end_of_stage = [p11[stage == s][-1] for s in (1, 2, 3, 4)]
    np.testing.assert_allclose(end_of_stage, [0, 0, 0, 1], atol=1e-9)
    assert run_cli("mz", "--mode", "ideal", "--no-dps", "--steps-per-bs", 5, "--out", tmp_path / "b") == 0
    d = csv(tmp_path / "b" / "mz.csv").as_dict()
    end_of_stage = [d["P11"][d["stage"] == s][-1] for s in (1, 2, 3, 4)]
    np.testing.assert_allclose(end_of_stage, [0, 1, 0, 1], atol=1e-9)


def test_multiphoton_ideal(tmp_path):
    assert run_cli("multiphoton", "--mode", "ideal", "--steps", 3, "--out", tmp_path) == 0
    d = csv(tmp_path / "multiphoton.csv")
    np.testing.assert_allclose(d.rows[0, 2:], [0, 1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(d.rows[1, 2:], [0.375, 0.125, 0.125, 0.375], atol=1e-9)
    split = csv(tmp_path / "coherent_split.csv").rows
    np.testing.assert_allclose(split[1, 1:], [1, 1], atol=1e-6)
    assert split[2, 1] <= 1e-6 and split[2, 2] == pytest.approx(2, abs=1e-6)


def test_calibrate(tmp_path):
    assert run_cli("calibrate", "--xi", 0, 0.12, "--out", tmp_path) == 0
    d = csv(tmp_path / "calibrate.csv")
    assert np.all(d.rows[0] == 0)
    row = dict(zip(d.columns, d.rows[1]))
    assert row["g"] == pytest.approx(0.0482, abs=5e-5)
    assert row["g_corrected"] == pytest.approx(0.0441, abs=5e-5)
    assert 0 < row["infidelity"] < 0.05


def test_calibrate_infidelity_roughly_flat(tmp_path):
    assert run_cli("calibrate", "--xi-max", 0.12, "--xi-steps", 7, "--out", tmp_path) == 0
    inf = csv(tmp_path / "calibrate.csv").column("infidelity")[2:]
    # qualitative: varies by far less than the 1/x a fixed decoherence time would give
    assert inf.max() / inf.min() < 3.0


def test_run_program_file_and_shipped(tmp_path):
    prog = tmp_path / "swap.prog"
    prog.write_text("prep fock 1 0\nbs theta=0.5pi\nmeasure joint\n")
    assert run_cli("run", prog, "--mode", "ideal", "--out", tmp_path) == 0
    assert csv(tmp_path / "swap.csv").column("P01")[0] == pytest.approx(1)
    assert run_cli("run", "multiphoton", "--out", tmp_path) == 0
    assert len(csv(tmp_path / "multiphoton.csv")) == 41
    manifest = RunManifest.read(tmp_path / "run.manifest.json")
    assert manifest.program_path == "shipped:multiphoton"


def test_fit_command(tmp_path):
    run_cli("rabi", "--mode", "ideal", "--out", tmp_path)
    assert run_cli("fit", tmp_path / "rabi.csv", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "rabi_sinusoid_fit.json").read_text())
    assert report["converged"]
    assert run_cli("fit", tmp_path / "rabi.csv", "--model", "rabi", "--y", "P10", "P01",
                   "--out", tmp_path) == 0
    assert run_cli("fit", tmp_path / "rabi.csv", "--y", "P77", "--out", tmp_path) == 2


def test_exit_codes(tmp_path):
    assert run_cli("teleport") == 2
    assert run_cli("rabi", "--dims", "1,1", "--out", tmp_path) == 2
    assert run_cli("run", "no_such_program", "--out", tmp_path) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("g = 0.034  # us\n")
    assert run_cli("rabi", "--config", bad, "--out", tmp_path) == 3
    assert run_cli("rabi", "--config", tmp_path / "missing.cfg", "--out", tmp_path) == 3
    prog = tmp_path / "tight.prog"
    prog.write_text("dims 3 3\nprep fock 2 1\nbs theta=0.25pi\nmeasure joint\n")
    assert run_cli("run", prog, "--out", tmp_path) == 4


def test_manifest_and_replay(tmp_path, capsys):
    out = tmp_path / "first"
    assert run_cli("hom", "--mode", "ideal", "--steps", 11, "--shots", 500, "--seed", 3, "--out", out) == 0
    manifest = RunManifest.read(out / "hom.manifest.json")
    assert manifest.command == "hom" and manifest.seed == 3 and manifest.shots == 500
    assert set(manifest.outputs) == {"hom.csv"}
    assert set(manifest.versions) >= {"python", "numpy"}
    assert run_cli("replay", out / "hom.manifest.json", "--out", tmp_path / "again") == 0
    assert (out / "hom.csv").read_bytes() == (tmp_path / "again" / "hom.csv").read_bytes()
    assert "replay identical" in capsys.readouterr().out
    # a tampered hash is reported as a mismatch
    payload = json.loads((out / "hom.manifest.json").read_text())
    payload["outputs"]["hom.csv"] = "0" * 64
    (out / "hom.manifest.json").write_text(json.dumps(payload))
    assert run_cli("replay", out / "hom.manifest.json", "--out", tmp_path / "third") == 4
    assert run_cli("replay", tmp_path / "nothing.json") == 2


def test_shots_are_seeded(tmp_path):
    def p11(seed, name):
        run_cli("hom", "--mode", "ideal", "--steps", 11, "--shots", 200, "--seed", seed, "--out", tmp_path / name)
        return csv(tmp_path / name / "hom.csv").column("P11")
    a, b, c = p11(1, "a"), p11(1, "b"), p11(2, "c")
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(a * 200 == np.round(a * 200))
