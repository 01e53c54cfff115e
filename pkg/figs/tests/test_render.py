import json
import subprocess
import sys

import pytest

from figs.render import FigureSpec, SchemaError, load_specs, render
from figs.cli import main

SWEEP_HEADER = ("sweep_var,sweep_value,drop,scheme,sum_rate,rate_user1,"
                "rate_user2,feasible,ao_rounds,seconds")


def write_sweep_csv(path, rows=()):
    lines = [SWEEP_HEADER]
    for i, (value, scheme, rate) in enumerate(rows):
        lines.append(f"pmax,{value},{i},{scheme},{rate},1.0,1.0,1,3,0.0")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_trace_csv(path):
    lines = ["series,iteration,value"]
    for i, v in enumerate((1.0, 2.5, 3.0, 3.2)):
        lines.append(f"ao,{i},{v}")
    for i, v in enumerate((0.5, 1.5, 2.0)):
        lines.append(f"matching_utility,{i},{v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_heatmap_csv(path):
    lines = ["x,y,gain_db_wg1,gain_db_wg2"]
    for xi in range(5):
        for yi in range(4):
            lines.append(f"{xi * 1.0},{yi * 1.0},{-(xi + yi)},{-(2 * xi)}")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestSpecs:
    def test_single_or_list(self, tmp_path):
        single = tmp_path / "one.json"
        single.write_text(json.dumps({"input": "a.csv", "kind": "heatmap"}))
        assert len(load_specs(single)) == 1
        many = tmp_path / "many.json"
        many.write_text(json.dumps([
            {"input": "a.csv", "kind": "line-sweep"},
            {"input": "b.csv", "kind": "convergence", "name": "conv"},
        ]))
        specs = load_specs(many)
        assert [s.name for s in specs] == ["line-sweep", "conv"]

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FigureSpec(input="a.csv", kind="pie")


class TestRender:
    def test_line_sweep_renders_and_is_idempotent(self, tmp_path):
        data = write_sweep_csv(tmp_path / "sweep.csv", [
            (0.01, "gaa", 15.0), (0.01, "gaa", 16.0),
            (0.1, "gaa", 21.0), (0.1, "gaa", 22.0),
            (0.01, "conventional", 11.0), (0.1, "conventional", 18.0),
        ])
        before = data.read_bytes()
        spec = FigureSpec(input=str(data), kind="line-sweep",
                          x_transform="watts-to-dbm",
                          x_label="power (dBm)")
        out1 = render(spec, tmp_path / "out")
        first = out1.read_bytes()
        out2 = render(spec, tmp_path / "out")
        assert out1 == out2
        assert out2.read_bytes() == first
        assert data.read_bytes() == before  # inputs never mutated
        assert first[:8] == b"\x89PNG\r\n\x1a\n"

    def test_header_only_warns_but_succeeds(self, tmp_path, capsys):
        data = write_sweep_csv(tmp_path / "empty.csv")
        spec = FigureSpec(input=str(data), kind="line-sweep")
        out = render(spec, tmp_path / "out")
        assert out.exists()
        assert "no data rows" in capsys.readouterr().err

    def test_schema_mismatch_names_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError, match="sweep_value"):
            render(FigureSpec(input=str(bad), kind="line-sweep"),
                   tmp_path / "out")

    def test_convergence_and_heatmap(self, tmp_path):
        trace = write_trace_csv(tmp_path / "trace.csv")
        heat = write_heatmap_csv(tmp_path / "heat.csv")
        out1 = render(FigureSpec(input=str(trace), kind="convergence"),
                      tmp_path / "out")
        out2 = render(FigureSpec(input=str(heat), kind="heatmap"),
                      tmp_path / "out")
        assert out1.exists() and out2.exists()


class TestCli:
    def test_render_batch(self, tmp_path, capsys):
        sweep = write_sweep_csv(tmp_path / "sweep.csv",
                                [(0.1, "gaa", 20.0), (0.2, "gaa", 22.0)])
        spec_file = tmp_path / "specs.json"
        spec_file.write_text(json.dumps([
            {"input": str(sweep), "kind": "line-sweep", "name": "rates"},
        ]))
        code = main(["render", "--spec", str(spec_file),
                     "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "rates.png").exists()

    def test_schema_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n")
        spec_file = tmp_path / "specs.json"
        spec_file.write_text(json.dumps(
            {"input": str(bad), "kind": "heatmap"}))
        code = main(["render", "--spec", str(spec_file),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "missing" in capsys.readouterr().err


@pytest.fixture(scope="module")
def exports(tmp_path_factory):
    root = tmp_path_factory.mktemp("exports")
    sweep = root / "sweep.csv"
    trace = root / "trace.csv"
    heat = root / "heat.csv"
    base = [sys.executable, "-m", "pinchsim.cli"]
    subprocess.run(base + ["sweep", "--scheme", "matching,conventional",
                           "--sweep", "pmax", "--values", "10,20",
                           "--drops", "2", "--seed", "3", "--n-pas", "2",
                           "--n-slots", "8", "--out", str(sweep)],
                   check=True, timeout=300)
    subprocess.run(base + ["solve", "--scheme", "matching", "--seed", "1",
                           "--n-pas", "2", "--n-slots", "8",
                           "--out", str(trace)],
                   check=True, timeout=300)
    subprocess.run(base + ["heatmap", "--n-pas", "1", "--nx", "31",
                           "--ny", "19", "--out", str(heat)],
                   check=True, timeout=300)
    return sweep, trace, heat


class TestAgainstSimulatorOutputs:
    """End-to-end: files produced by the simulator CLI render cleanly."""

    def test_renders_all_three_kinds(self, exports, tmp_path):
        sweep, trace, heat = exports
        out = tmp_path / "out"
        for spec in (
            FigureSpec(input=str(sweep), kind="line-sweep",
                       x_transform="watts-to-dbm", name="sweep"),
            FigureSpec(input=str(trace), kind="convergence", name="conv"),
            FigureSpec(input=str(heat), kind="heatmap", name="heat"),
        ):
            first = render(spec, out)
            data = first.read_bytes()
            again = render(spec, out)
            assert again.read_bytes() == data
