import csv
import json

import pytest

from dynperc import __version__
from dynperc.cli import load_config, main
from dynperc.errors import ConfigError


def rows_of(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_run_writes_one_row_per_replication(tmp_path):
    out = tmp_path / "cover.csv"
    code = main(["run", "--d", "1", "--n", "5", "--p", "0.3", "--mu", "1", "--stop", "cover",
                 "--reps", "1000", "--seed", "42", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.startswith(f"# dynperc {__version__} run\n")
    assert "# seed = 42" in text and "# mu = 1.0" in text
    rows = rows_of(out)
    assert len(rows) == 1000
    assert list(rows[0]) == ["replication", "seed", "n", "d", "p", "mu", "mode", "ca", "stop",
                             "elapsed", "n_events", "n_jumps"]
    assert len({r["seed"] for r in rows}) == 1000
    assert all(r["elapsed"] == format(float(r["elapsed"]), ".9g") for r in rows)


def test_identical_invocations_are_byte_identical(tmp_path):
    args = ["sweep", "--d", "2", "--ns", "4,5,6", "--mus", "0.5,1", "--p", "0.3", "--reps", "20",
            "--seed", "7", "--normalizer", "n^2(log n)^2/mu", "--figures"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + [str(a / "figs"), "--out", str(a / "s.csv")]) == 0
    assert main(args + [str(b / "figs"), "--out", str(b / "s.csv")]) == 0
    for name in ("s.csv", "s.summary.json"):
        ta = (a / name).read_text().replace(str(a), "")
        tb = (b / name).read_text().replace(str(b), "")
        assert ta == tb
    figs = sorted(p.name for p in (a / "figs").iterdir())
    assert figs and figs == sorted(p.name for p in (b / "figs").iterdir())
    for name in figs:
        assert (a / "figs" / name).read_bytes() == (b / "figs" / name).read_bytes()
    summary = json.loads((a / "s.summary.json").read_text())
    assert summary["header"]["version"] == f"dynperc {__version__}"
    assert len(summary["cells"]) == 6 and summary["fits"] and summary["bands"]
    assert {r["cell"] for r in rows_of(a / "s.csv")} == {f"cell{i:03d}" for i in range(6)}


def test_fit_reads_sweep_output(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--d", "1", "--ns", "8,16,32", "--p", "0.4", "--reps", "30",
                 "--seed", "1", "--out", str(out)]) == 0
    fit = tmp_path / "fit.json"
    assert main(["fit", "--input", str(out), "--normalizer", "n^2/mu", "--seed", "1",
                 "--out", str(fit)]) == 0
    doc = json.loads(fit.read_text())
    assert 1.5 < doc["fits"][0]["slope"] < 2.5
    assert main(["fit", "--input", str(out), "--normalizer", "n^2/mu", "--max-band", "1.0001",
                 "--seed", "1", "--out", str(fit)]) == 2


def test_oracle_json(tmp_path, capsys):
    assert main(["oracle", "hit", "--n", "3", "--p", "0.5", "--mu", "1", "--x", "0", "--y", "1",
                 "--init", "stationary", "--seed", "0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["residual"] < 1e-10
    assert doc["value"] == pytest.approx(4.85121269, abs=1e-8)
    assert {"instance", "method", "value", "residual", "states"} <= set(doc)
    assert main(["oracle", "cover", "--n", "6", "--seed", "0"]) == 1
    fig = tmp_path / "f"
    assert main(["oracle", "tv", "--n", "4", "--p", "0.3", "--init", "closed", "--seed", "0",
                 "--figures", str(fig), "--out", str(tmp_path / "tv.json")]) == 0
    assert (fig / "tv.png").exists()


@pytest.mark.parametrize("argv,param", [
    (["run", "--n", "2", "--seed", "1"], "n"),
    (["run", "--p", "1.5", "--seed", "1"], "p"),
    (["run", "--mu", "0", "--seed", "1"], "mu"),
    (["run", "--mode", "lazy", "--law", "closed", "--seed", "1"], "mode"),
    (["run", "--reps", "10"], "seed"),
    (["run", "--bogus", "1", "--seed", "1"], "--bogus"),
    (["run", "--format", "xml", "--seed", "1"], "format"),
])
def test_config_errors_exit_1(argv, param, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err.strip()
    assert "\n" not in err and param in err


def test_validate_and_matthews_exit_codes(tmp_path):
    out = tmp_path / "v.json"
    base = ["validate", "--d", "1", "--n", "5", "--p", "0.3", "--mu", "0.5", "--T", "5",
            "--reps", "5000", "--seed", "4", "--out", str(out)]
    assert main(base) == 0
    assert json.loads(out.read_text())["passed"] is True
    # an impossible threshold turns the same comparison into an acceptance failure
    assert main(base + ["--threshold", "0"]) == 2
    m = tmp_path / "m.json"
    assert main(["matthews", "--d", "1", "--n", "6", "--p", "0.4", "--reps-cover", "200",
                 "--reps-hit", "200", "--seed", "3", "--out", str(m)]) in (0, 2)
    doc = json.loads(m.read_text())
    assert doc["harmonic"] == pytest.approx(2.45)


def test_regen_outputs(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["regen", "--d", "1", "--n", "6", "--p", "0.4", "--K", "36", "--reps", "50",
                 "--seed", "5", "--out", str(out), "--figures", str(tmp_path / "f")]) == 0
    rows = rows_of(out)
    assert list(rows[0]) == ["replication", "k", "tau_tilde", "x_vertex", "range_size"]
    assert rows[0]["tau_tilde"] == "0" and rows[0]["k"] == "0"
    summary = json.loads((tmp_path / "r.summary.json").read_text())
    assert summary["stats"]["gap_mean"] >= 1
    assert (tmp_path / "f" / "survival.png").exists()


def test_run_with_regen_log(tmp_path):
    out, log = tmp_path / "r.csv", tmp_path / "log.csv"
    assert main(["run", "--d", "2", "--n", "5", "--p", "0.3", "--law", "conditioned",
                 "--stop", "regen:4", "--reps", "3", "--seed", "9", "--out", str(out),
                 "--regen-log", str(log)]) == 0
    logs = rows_of(log)
    assert len(logs) == 15
    assert [r["range_size"] for r in logs[:5]][-1] == ""


def test_load_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nmu = 0.5\nn = 4\nseed = 3\n")
    assert load_config(cfg) == {"mu": 0.5, "n": 4, "seed": 3}
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(cfg), "--mu", "1", "--reps", "5", "--p", "0.3",
                 "--out", str(out)]) == 0
    rows = rows_of(out)
    assert rows[0]["mu"] == "1" and rows[0]["n"] == "4"

    empty = tmp_path / "empty.cfg"
    empty.write_text("")
    assert main(["run", "--config", str(empty)]) == 1

    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nunknown_key = 3\n")
    with pytest.raises(ConfigError) as exc:
        load_config(bad)
    assert "unknown_key" in str(exc.value) and ":2:" in str(exc.value)

    broken = tmp_path / "broken.cfg"
    broken.write_text("seed = 1\n\nthis is not a pair\n")
    with pytest.raises(ConfigError, match=":3:"):
        load_config(broken)


def test_json_format_run(capsys):
    assert main(["run", "--d", "1", "--n", "4", "--p", "0.3", "--reps", "3", "--seed", "2",
                 "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["rows"]) == 3 and doc["estimate"]["reps"] == 3
