import json
from fractions import Fraction

import pytest

from wtan.cli import dumps, main
from wtan.instances import expected_translated_w2_sq, two_atom_translation_instance
from wtan.measure import DiscreteMeasure
from wtan.tangent import TangentElement
from wtan.transport import Coupling


def write(path, obj):
    path.write_text(dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj))
    return str(path)


def test_ot_prints_distance_and_writes_coupling(tmp_path, capsys):
    a = write(tmp_path / "a.json", DiscreteMeasure([0.0, 1.0]))
    b = write(tmp_path / "b.json", DiscreteMeasure([3.0, 4.0]))
    out = tmp_path / "out"
    assert main(["ot", a, b, "--out", str(out)]) == 0
    assert float(capsys.readouterr().out) == 3.0
    data = json.loads((out / "coupling.json").read_text())
    assert data["W_p"] == 3.0 and data["p"] == 2.0


def test_no_out_writes_nothing(tmp_path, monkeypatch):
    a = write(tmp_path / "a.json", DiscreteMeasure([0.0]))
    monkeypatch.chdir(tmp_path)
    assert main(["ot", a, a]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.json"]


def test_bad_json_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 1,\n "atoms": [[0.0]]\n "weights": [1]}')
    assert main(["ot", str(bad), str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 3 column 2" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_schema_error_exit_one(tmp_path, capsys):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"dim": 1, "atoms": [[0.0, 1.0]], "weights": [1]}))
    assert main(["ot", str(p), str(p)]) == 1
    assert "atoms[0]" in capsys.readouterr().err


def test_usage_error_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["ot"])
    assert exc.value.code == 2
    assert main(["repro", "no-such-example"]) == 2
    assert "usage: wtan repro" in capsys.readouterr().err


def test_too_large_exit_three_and_no_partial_output(tmp_path, capsys):
    base = DiscreteMeasure([0.0])
    fiber = DiscreteMeasure([[float(k)] for k in range(5)], [Fraction(1, 5)] * 5)
    psi = write(tmp_path / "psi.json", TangentElement(base, [fiber]))
    gamma = Coupling.from_pairs([[0.0]] * 5, [[float(k)] for k in range(5)], [Fraction(1, 5)] * 5)
    g = write(tmp_path / "g.json", gamma)
    out = tmp_path / "out"
    assert main(["ptransport", psi, g, "--enumerate", "--out", str(out)]) == 3
    assert "solver failure" in capsys.readouterr().err
    assert not out.exists()


def test_ptransport_enumerates_three_laws(tmp_path, capsys):
    base = DiscreteMeasure([0.0], [1])
    fiber = DiscreteMeasure([0.0, 2.0], [Fraction(1, 2)] * 2)
    psi = write(tmp_path / "psi.json", TangentElement(base, [fiber]))
    gamma = Coupling.from_pairs([[0.0], [0.0]], [[1.0], [-1.0]], [Fraction(1, 2)] * 2)
    g = write(tmp_path / "g.json", gamma)
    assert main(["ptransport", psi, g, "--enumerate", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("3 transport(s)")
    data = json.loads((tmp_path / "transports.json").read_text())
    assert all(all(t["checks"].values()) for t in data["transports"])


def test_translate_csv_matches_expected_curve(tmp_path, capsys):
    eta, gamma0 = two_atom_translation_instance()
    e = write(tmp_path / "eta.json", eta)
    g = write(tmp_path / "g0.json", gamma0)
    assert main(["translate", e, g, "--out", str(tmp_path / "out"), "--svg"]) == 0
    lines = (tmp_path / "out" / "distance.csv").read_text().splitlines()
    assert lines[0] == "t,W2_sq"
    for line, t in zip(lines[1:], eta.grid):
        assert float(line.split(",")[1]) == float(expected_translated_w2_sq(t))
    assert (tmp_path / "out" / "distance.svg").read_text().startswith("<svg")


def test_holder_byte_identical_runs(tmp_path, capsys):
    args = ["holder", "--alpha", "0.5", "1", "--budget", "40", "--seed", "3", "--svg"]
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for name in ("holder.json", "holder.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["holder", "--alpha", "1.5"]) == 1


def test_tangent_commands(tmp_path, capsys):
    base = DiscreteMeasure([0.0, 1.0])
    phi = write(tmp_path / "phi.json", TangentElement(base, [DiscreteMeasure([1.0]), DiscreteMeasure([0.0])]))
    psi = write(tmp_path / "psi.json", TangentElement(base, [DiscreteMeasure([0.0]), DiscreteMeasure([0.0])]))
    for cmd in ("tangent-dist", "calc-D", "calc-E"):
        assert main([cmd, phi, psi]) == 0
    d, dd, e = (float(x) for x in capsys.readouterr().out.split())
    assert d == pytest.approx(0.5 ** 0.5) and dd == pytest.approx(0.5 ** 0.5) and e == pytest.approx(0.5)


def test_control_instance(tmp_path, capsys):
    m0 = write(tmp_path / "m0.json", DiscreteMeasure.dirac(1.0))
    assert main(["control", "--instance", "lq", "--m0", m0, "--mode", "deterministic",
                 "--budget", "2", "--out", str(tmp_path)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.5, abs=1e-9)
    data = json.loads((tmp_path / "control.json").read_text())
    assert data["upper_bound"] is True


def test_repro_single_example(tmp_path, capsys):
    assert main(["repro", "nonuniq-transport", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS nonuniq-transport")
    assert json.loads((tmp_path / "nonuniq-transport.json").read_text())["passed"] is True


def test_dumps_keeps_full_precision():
    assert json.loads(dumps({"x": 0.1 + 0.2}))["x"] == 0.1 + 0.2
    assert dumps({"b": [1, 2], "a": Fraction(1, 3)}) == dumps({"a": Fraction(1, 3), "b": [1, 2]})

