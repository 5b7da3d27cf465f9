import csv

import matplotlib.pyplot as plt
import pytest

from s4mtl.cli import main
from s4mtl.experiment import (AGGREGATE_ID, ConfigError, aggregate, collect_runs, load_config,
                              parse_config, run, run_id)
from s4mtl.report import accuracy_plot, build_report, dice_boxplot

TINY = """\
# tiny sweep
dataset.count = 60
dataset.side = 16
methods = S4MTL, UNET, CONVNET
fractions = 0.5
fractions.UNET = 1.0
seeds = 0
trainer.epochs = 1
trainer.batch_size = 8
model.base_channels = 4
model.depth = 2
model.convs_per_block = 1
model.disc_depth = 2
model.disc_base_channels = 4
output = out
"""


def write_cfg(tmp_path, text=TINY, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_defaults_and_overrides(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    assert cfg.methods == ["S4MTL", "UNET", "CONVNET"]
    assert cfg.fractions_for("UNET") == [1.0]
    assert cfg.output == (tmp_path / "out").resolve()
    assert [run_id(*r) for r in cfg.runs()] == ["S4MTL-f0.5-s0", "UNET-f1-s0", "CONVNET-f0.5-s0"]
    t = cfg.trainer_config("S4MTL", 3)
    assert t.epochs == 1 and t.seed == 3


@pytest.mark.parametrize("line,msg", [
    ("methods = S4MTL, GAN", "methods"),
    ("fractions = 0.6", "cap"),
    ("fractions = 0.25", "grid"),
    ("trainer.bogus = 1", "unknown key"),
    ("trainer.epochs = many", "trainer.epochs"),
    ("just words", "key = value"),
])
def test_config_errors_are_line_anchored(line, msg):
    with pytest.raises(ConfigError, match=msg) as exc:
        parse_config(f"seeds = 0\n{line}\n", origin="x.cfg")
    assert str(exc.value).startswith("x.cfg:2:") or "x.cfg" in str(exc.value)


def test_full_supervision_only_for_single_task():
    with pytest.raises(ConfigError, match="S4MTL"):
        parse_config("methods = S4MTL\nfractions = 1.0\n")
    parse_config("methods = UNET\nfractions = 1.0\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seeds = 0\nseeds = 1\n")


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    cfg = write_cfg(tmp)
    summary = run(cfg)
    assert summary.exit_code == 0, summary.failed
    return tmp, cfg


def test_run_artifacts(results):
    tmp, _ = results
    d = tmp / "out" / "S4MTL-f0.5-s0"
    for name in ("manifest.csv", "history.csv", "val_metrics.csv", "test_metrics.csv", "timing.csv"):
        assert (d / name).exists(), name
    assert list(d.glob("ckpt-*.npz"))
    rows = list(csv.DictReader(open(d / "test_metrics.csv")))
    assert rows[-1]["id"] == AGGREGATE_ID
    assert {"DS", "JI", "HD", "pred_class", "truth_pixels"} <= set(rows[0])
    assert (tmp / "out" / "results.csv").exists() and (tmp / "out" / "stats.csv").exists()


def test_table_order_and_traceability(results):
    tmp, _ = results
    lines = (tmp / "out" / "results.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["UNET", "CONVNET", "S4MTL"]
    runs, missing = collect_runs(tmp / "out")
    assert not missing
    agg = next(r for r in runs[("S4MTL", 0.5)][0] if r["id"] == AGGREGATE_ID)
    row = next(l.split(",") for l in lines if l.startswith("S4MTL"))
    assert float(row[3]) == float(agg["DS"])


def test_rerun_refuses_then_resumes(results):
    tmp, cfg = results
    s = run(cfg)
    assert s.exit_code == 2 and len(s.failed) == 3
    s = run(cfg, resume=True)
    assert s.exit_code == 0 and len(s.skipped) == 3


def test_determinism_of_run_outputs(results, tmp_path):
    tmp, _ = results
    cfg2 = write_cfg(tmp_path, TINY.replace("methods = S4MTL, UNET, CONVNET", "methods = S4MTL")
                     .replace("fractions.UNET = 1.0\n", ""))
    run(cfg2)
    for name in ("history.csv", "test_metrics.csv"):
        a = (tmp / "out" / "S4MTL-f0.5-s0" / name).read_bytes()
        b = (tmp_path / "out" / "S4MTL-f0.5-s0" / name).read_bytes()
        assert a == b, name


def test_report_is_reproducible_and_lists_missing(results):
    tmp, _ = results
    out = tmp / "out"
    first = build_report(out)
    blobs = [p.read_bytes() for p in first["paths"]]
    again = build_report(out)
    assert blobs == [p.read_bytes() for p in again["paths"]]
    (out / "UMTL-f0.5-s0").mkdir(exist_ok=True)
    res = build_report(out)
    assert res["missing"] == ["UMTL-f0.5-s0"]
    assert "UMTL-f0.5-s0" in (out / "report" / "report.txt").read_text()
    (out / "UMTL-f0.5-s0").rmdir()


def test_plot_series_counts():
    header = ["method", "fraction", "seeds", "accuracy"]
    table = [[m, f, 1, 0.5 + f / 2] for m in ("S4MTL", "S2MTL") for f in (0.5, 0.3, 0.1)]
    fig = accuracy_plot(header, table)
    lines = fig.axes[0].get_lines()
    assert len(lines) == 2 and all(len(l.get_xdata()) == 3 for l in lines)
    plt.close(fig)
    rows = [{"id": f"s{i}", "DS": str(i / 10)} for i in range(5)] + [{"id": AGGREGATE_ID}]
    fig = dice_boxplot({("UNET", 1.0): {0: rows}})
    assert len(fig.axes[0].get_xticklabels()) == 1
    plt.close(fig)


def test_aggregate_on_empty_dir(tmp_path):
    res = aggregate(tmp_path)
    assert res["table"] == [] and res["stats"] == []


# -- CLI ---------------------------------------------------------------------------

def test_cli_validate(tmp_path, capsys):
    assert main(["validate", str(write_cfg(tmp_path))]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    bad = write_cfg(tmp_path, "methods = NOPE\n", "bad.cfg")
    assert main(["validate", str(bad)]) == 1
    assert "methods" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.cfg")]) == 1


def test_cli_synth(tmp_path):
    assert main(["synth", "6", "16", "0", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d" / "images").iterdir())) == 6
    assert main(["synth", "0", "16", "0", str(tmp_path / "e")]) == 1


def test_cli_run_and_report(results, capsys):
    tmp, cfg = results
    assert main(["run", str(cfg)]) == 2
    assert main(["run", str(cfg), "--resume"]) == 0
    assert main(["report", str(tmp / "out")]) == 0
    assert main(["report", str(tmp / "nowhere")]) == 1
