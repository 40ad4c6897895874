import json
import os

import numpy as np
import pytest

from mcfkit import certify, cli, linops, simulate, tomography as tom


def run_cli(argv):
    return cli.main(argv)


def test_frequency_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    counts = rng.integers(1, 1000, size=(5, 10)).astype(float)
    table = certify.FrequencyTable.from_counts(counts, rounds=np.full(5, 1e5))
    path = str(tmp_path / "freq.csv")
    cli.write_frequency_csv(path, table, counts=counts)
    loaded = cli.read_frequency_csv(path)
    np.testing.assert_allclose(loaded.frequencies, table.frequencies)
    np.testing.assert_allclose(loaded.rounds, table.rounds)


def test_intensity_and_scan_csv(tmp_path):
    U = linops.symmetric_bs_4(0.0)
    table = tom.synthesize_intensities(U)
    ipath = tmp_path / "intens.csv"
    rows = [
        (j, k, repr(float(table.values[j, k])), "0.0")
        for j in range(4)
        for k in range(4)
    ]
    cli.write_csv(str(ipath), ["output_port", "input_mode", "intensity", "error"], rows)
    loaded = cli.read_intensity_csv(str(ipath))
    np.testing.assert_allclose(loaded.values, table.values)

    scans = tom.synthesize_scans(U)
    spath = tmp_path / "scans.csv"
    rows = []
    for (k, j), scan in scans.items():
        for phase, prob, err in scan.samples:
            rows.append((j, k, repr(float(phase)), repr(float(prob)), repr(float(err))))
    cli.write_csv(
        str(spath),
        ["input_mode", "output_port", "phase", "probability", "error"],
        rows,
    )
    loaded_scans = cli.read_scan_csv(str(spath))
    assert len(loaded_scans) == len(scans)


def test_malformed_csv_diagnostics(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("")
    with pytest.raises(cli.CsvFormatError):
        cli.read_frequency_csv(str(path))
    path.write_text("input,outcome,count,rounds\n")
    with pytest.raises(cli.CsvFormatError, match="no data rows"):
        cli.read_frequency_csv(str(path))
    path.write_text("input,outcome,count,rounds\n0,0,abc,10\n")
    with pytest.raises(cli.CsvFormatError, match=":2:"):
        cli.read_frequency_csv(str(path))
    path.write_text("wrong,columns\n1,2\n")
    with pytest.raises(cli.CsvFormatError, match="missing columns"):
        cli.read_frequency_csv(str(path))


def test_cmd_tomography_fixture(tmp_path):
    code = run_cli(
        ["tomography", "--fixture", "measured-4x4", "--out", str(tmp_path)]
    )
    assert code == 0
    with open(tmp_path / "tomography.json") as f:
        result = json.load(f)
    assert result["fidelity_model"] == pytest.approx(0.995, abs=0.003)
    assert result["fidelity_exp_unitary"] == pytest.approx(0.999, abs=0.001)
    unitary = cli._matrix_from_json(result["unitary"])
    assert linops.is_unitary(unitary)
    with open(tmp_path / "manifest.json") as f:
        manifest = json.load(f)
    assert str(tmp_path / "tomography.json") in manifest["outputs"]


def test_cmd_tomography_unknown_fixture(tmp_path):
    with pytest.raises(SystemExit):
        run_cli(["tomography", "--fixture", "nope", "--out", str(tmp_path)])


def test_cmd_tomography_from_csv_round_trip(tmp_path):
    U = linops.symmetric_bs_4(0.0)
    table = tom.synthesize_intensities(U)
    rows = [
        (j, k, repr(float(table.values[j, k])), "0.0")
        for j in range(4)
        for k in range(4)
    ]
    ipath = tmp_path / "intens.csv"
    cli.write_csv(str(ipath), ["output_port", "input_mode", "intensity", "error"], rows)
    rows = []
    for (k, j), scan in tom.synthesize_scans(U).items():
        for phase, prob, err in scan.samples:
            rows.append((j, k, repr(float(phase)), repr(float(prob)), repr(float(err))))
    spath = tmp_path / "scans.csv"
    cli.write_csv(
        str(spath),
        ["input_mode", "output_port", "phase", "probability", "error"],
        rows,
    )
    code = run_cli(
        [
            "tomography",
            "--intensities", str(ipath),
            "--scans", str(spath),
            "--out", str(tmp_path),
        ]
    )
    assert code == 0
    with open(tmp_path / "tomography.json") as f:
        result = json.load(f)
    assert result["fidelity_model"] > 1 - 1e-8


def test_cmd_simulate_and_certify(tmp_path):
    sim_dir = tmp_path / "sim"
    code = run_cli(
        ["simulate", "--duration", "0.5", "--seed", "3", "--out", str(sim_dir)]
    )
    assert code == 0
    assert (sim_dir / "runlog.json").exists()
    assert (sim_dir / "zone000.csv").exists()
    with open(sim_dir / "runlog.json") as f:
        obj = json.load(f)
    log = cli.runlog_from_json(obj)
    assert log.accepted_rounds > 0

    cert_dir = tmp_path / "cert"
    code = run_cli(
        [
            "certify",
            "--runlog", str(sim_dir / "runlog.json"),
            "--out", str(cert_dir),
        ]
    )
    assert code == 0
    with open(cert_dir / "certification.json") as f:
        cert = json.load(f)
    assert 0 < cert["overall"]["guessing_probability"] <= 1
    assert cert["overall"]["min_entropy"] > 0
    assert "bits_per_second" in cert["overall"]
    assert len(cert["zones"]) == len(log.zones)


def test_simulate_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli(
            ["simulate", "--duration", "0.3", "--seed", "8", "--out", str(out)]
        ) == 0
    assert (a / "runlog.json").read_bytes() == (b / "runlog.json").read_bytes()
    assert (a / "zone000.csv").read_bytes() == (b / "zone000.csv").read_bytes()


def test_invalid_arguments_rejected(tmp_path):
    with pytest.raises(SystemExit):
        run_cli(["simulate", "--duration", "-1", "--out", str(tmp_path)])
    with pytest.raises(SystemExit):
        run_cli(
            ["certify", "--epsilon", "1.0", "--frequencies", "x.csv",
             "--out", str(tmp_path)]
        )
    with pytest.raises(SystemExit):
        run_cli(
            ["certify", "--mu", "-0.4", "--frequencies", "x.csv",
             "--out", str(tmp_path)]
        )
    with pytest.raises(SystemExit):
        run_cli(["reproduce", "not-a-target"])


def test_invalid_config_fields(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_field": 1}))
    with pytest.raises(SystemExit, match="unknown config fields"):
        run_cli(
            ["simulate", "--duration", "0.1", "--config", str(cfg),
             "--out", str(tmp_path)]
        )
    cfg.write_text(json.dumps({"detector_efficiency": 0.0}))
    with pytest.raises(SystemExit, match="detector_efficiency"):
        run_cli(
            ["simulate", "--duration", "0.1", "--config", str(cfg),
             "--out", str(tmp_path)]
        )


def test_config_file_applied(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"drift_sigma": 0.0, "seed": 12}))
    out = tmp_path / "run"
    assert run_cli(
        ["simulate", "--duration", "0.2", "--config", str(cfg),
         "--out", str(out)]
    ) == 0
    with open(out / "runlog.json") as f:
        obj = json.load(f)
    assert obj["config"]["drift_sigma"] == 0.0
    assert obj["config"]["seed"] == 12


def test_reproduce_ideal_entropy_passes(capsys):
    assert run_cli(["reproduce", "ideal-entropy"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_atomic_write_no_temp_left(tmp_path):
    path = tmp_path / "f.json"
    cli.write_json(str(path), {"a": 1})
    assert json.loads(path.read_text()) == {"a": 1}
    assert os.listdir(tmp_path) == ["f.json"]
