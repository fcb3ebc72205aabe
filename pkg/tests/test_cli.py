import numpy as np
import pytest

from shapmkt.cli import main
from shapmkt.market import load_market
from shapmkt.model import load_model


def test_pipeline_through_cli(tmp_path, capsys):
    mk, sds, model = tmp_path / "mk", tmp_path / "sds.csv", tmp_path / "model.txt"
    assert main(["gen-market", "--owners", "3", "--group-size", "40", "--out", str(mk)]) == 0
    assert load_market(mk).N == 3
    assert main(["build-sds", "--market", str(mk), "--size", "30", "--out", str(sds)]) == 0
    assert (tmp_path / "sds.pool.csv").exists()
    assert main(["train-utility", "--sds", str(sds), "--out", str(model), "--epochs", "3"]) == 0
    assert load_model(model).preset == "mlp-synthetic"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"owners = 3\ngroup_size = 40\nmodel_path = {model}\n")
    out = tmp_path / "report"
    assert main(["valuate", "--plaintext", "--config", str(cfg), "--out", str(out)]) == 0
    plain = np.loadtxt(out / "owners.csv", delimiter=",", skiprows=1, usecols=1)
    assert main(["run-protocol", "--config", str(cfg), "--out", str(out)]) == 0
    secure = np.loadtxt(out / "owners.csv", delimiter=",", skiprows=1, usecols=1)
    assert np.max(np.abs(plain - secure)) < 1e-3
    for name in ("utilities.csv", "cost.csv", "ledger.tsv", "summary.txt"):
        assert (out / name).exists()
    assert "owner 1" in capsys.readouterr().out


def test_parse_circuit(tmp_path, capsys):
    export = tmp_path / "aes.txt"
    assert main(["parse-circuit", "aes256", "--export", str(export)]) == 0
    first = capsys.readouterr().out
    assert "AND: 70656" in first
    assert main(["parse-circuit", str(export)]) == 0
    assert capsys.readouterr().out == first
    bad = tmp_path / "bad.txt"
    bad.write_text("1 3\n2 1 1\n1 1\n2 1 0 1 2 MAND\n")
    assert main(["parse-circuit", str(bad)]) == 2


def test_exit_codes(tmp_path):
    assert main(["run-protocol", "--set", "owners=20"]) == 2
    assert main(["run-protocol", "--set", "bogus=1"]) == 2
    assert main(["run-protocol", "--config", str(tmp_path / "none.cfg")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["valuate"])
    assert exc.value.code == 2


def test_protocol_abort_exit_code(monkeypatch, tmp_path):
    from shapmkt import cli
    from shapmkt.errors import AbortError, ProtocolAbort

    def boom(cfg):
        raise ProtocolAbort("mpc", AbortError("party 2 stopped responding"))

    monkeypatch.setattr(cli, "run_protocol", boom)
    assert main(["run-protocol"]) == 3


def test_bench_cli(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--owners", "2", "--samples", "10", "--no-crypto", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("owners,samples") and len(lines) == 2
    assert main(["bench", "--owners", "x"]) == 2
