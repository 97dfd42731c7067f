"""End-to-end command-line behavior: synth/ingest/run/ablate/sweep-m/gridsearch,
config layering, exit codes, locking, and byte-identical reruns."""

from __future__ import annotations

import json

import numpy as np
import pytest

from gsloc.cli import main
from gsloc.dataset import write_descriptors, write_metadata, load_metadata

SYNTH_ARGS = ["--n-places", "6", "--n-support-sequences", "2",
              "--n-query-sequences", "1", "--frames-per-place", "2",
              "--dim", "16", "--seed", "3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(out)] + SYNTH_ARGS) == 0
    return out


def _dataset_flags(data_dir):
    return ["--support-metadata", str(data_dir / "support_metadata.csv"),
            "--support-descriptors", str(data_dir / "support_descriptors.emb1"),
            "--query-metadata", str(data_dir / "query_metadata.csv"),
            "--query-descriptors", str(data_dir / "query_descriptors.emb1")]


def _run(tmp_path, data_dir, name, extra=()):
    out = tmp_path / name
    cache = tmp_path / f"{name}-cache"
    rc = main(["run", "--out-dir", str(out), "--cache-dir", str(cache)]
              + _dataset_flags(data_dir) + list(extra))
    return rc, out


# ---------------------------------------------------------------------------
# synth + ingest


def test_synth_writes_complete_dataset(data_dir):
    for name in ("support_metadata.csv", "support_descriptors.emb1",
                 "query_metadata.csv", "query_descriptors.emb1",
                 "ground_truth.json", "synth_manifest.json"):
        assert (data_dir / name).exists()
    records = load_metadata(data_dir / "support_metadata.csv")
    assert len(records) == 2 * 6 * 2
    truth = json.loads((data_dir / "ground_truth.json").read_text())
    assert truth[records[0].image_id] == 0


def test_synth_is_seed_reproducible(tmp_path, data_dir):
    again = tmp_path / "again"
    assert main(["synth", "--out-dir", str(again)] + SYNTH_ARGS) == 0
    for name in ("support_metadata.csv", "support_descriptors.emb1",
                 "query_metadata.csv", "query_descriptors.emb1"):
        assert (again / name).read_bytes() == (data_dir / name).read_bytes()


def test_ingest_prints_count_table(tmp_path, data_dir, capsys):
    out = tmp_path / "ingest"
    rc = main(["ingest", "--out-dir", str(out)] + _dataset_flags(data_dir))
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["split", "sequences", "images"]
    assert lines[1].split() == ["support", "2", "24"]
    assert lines[2].split() == ["query", "1", "12"]
    manifest = json.loads((out / "ingest_manifest.json").read_text())
    assert manifest["splits"]["support"]["n_images"] == 24
    assert manifest["splits"]["query"]["dim"] == 16


def test_ingest_row_count_mismatch_exits_2(tmp_path, capsys):
    meta = tmp_path / "m.csv"
    desc = tmp_path / "d.emb1"
    from gsloc.dataset import ImageRecord
    write_metadata(meta, [ImageRecord(f"x{i}", "s", i, 0.0, 0.0)
                          for i in range(3)])
    write_descriptors(desc, np.zeros((2, 4), dtype=np.float32))
    rc = main(["ingest", "--out-dir", str(tmp_path / "out"),
               "--support-metadata", str(meta),
               "--support-descriptors", str(desc)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "2 descriptor rows, expected 3" in err


def test_missing_input_file_exits_2(tmp_path, data_dir, capsys):
    flags = _dataset_flags(data_dir)
    flags[1] = str(tmp_path / "nope.csv")
    rc = main(["run", "--out-dir", str(tmp_path / "o")] + flags)
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_unset_input_path_exits_2(tmp_path, capsys):
    rc = main(["run", "--out-dir", str(tmp_path / "o")])
    assert rc == 2
    assert "path not set" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run


def test_run_writes_reports(tmp_path, data_dir, capsys):
    rc, out = _run(tmp_path, data_dir, "a")
    assert rc == 0
    for name in ("report.json", "report.csv", "matches.csv", "manifest.json"):
        assert (out / name).exists()
    assert not (out / ".lock").exists(), "lock must be released"
    report = json.loads((out / "report.json").read_text())
    assert report["regime"] == "gs_both"
    assert 0.0 <= report["acc_at_threshold"] <= 1.0
    assert len(report["per_query_error_m"]) == 12
    stdout = capsys.readouterr().out
    assert "regime=gs_both: median" in stdout


def test_run_reruns_are_byte_identical(tmp_path, data_dir):
    rc1, out1 = _run(tmp_path, data_dir, "warm")
    # Same cache directory: every stage hits.
    out2 = tmp_path / "warm2"
    rc2 = main(["run", "--out-dir", str(out2), "--cache-dir",
                str(tmp_path / "warm-cache")] + _dataset_flags(data_dir))
    # Fresh cache directory: every stage recomputes.
    rc3, out3 = _run(tmp_path, data_dir, "cold")
    assert rc1 == rc2 == rc3 == 0
    for name in ("report.json", "report.csv", "matches.csv", "manifest.json"):
        reference = (out1 / name).read_bytes()
        assert (out2 / name).read_bytes() == reference, f"{name} (warm cache)"
        assert (out3 / name).read_bytes() == reference, f"{name} (cold cache)"


def test_run_regime_none_warns_about_ignored_m(tmp_path, data_dir, capsys):
    rc, _ = _run(tmp_path, data_dir, "none", ["--regime", "none"])
    assert rc == 0
    assert "ignores m=2" in capsys.readouterr().err


def test_run_noiseless_world_is_perfect(tmp_path, capsys):
    data = tmp_path / "clean"
    assert main(["synth", "--out-dir", str(data), "--n-places", "5",
                 "--n-support-sequences", "2", "--n-query-sequences", "1",
                 "--frames-per-place", "2", "--dim", "16",
                 "--noise-sigma", "0", "--gps-jitter-m", "0"]) == 0
    rc, out = _run(tmp_path, data, "clean-run", ["--regime", "none", "--m", "0"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["acc_at_threshold"] == 1.0
    assert report["median_error_m"] == 0.0


def test_run_with_projection(tmp_path, data_dir):
    rc, out = _run(tmp_path, data_dir, "proj",
                   ["--projection", "--d-out", "8"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["projection"] == {"enabled": True, "d_out": 8,
                                                "eps": None}
    assert manifest["provenance"]["projection_key"]
    cache = tmp_path / "proj-cache"
    assert list(cache.glob("projection-*.prj1"))


def test_run_projection_without_d_out_exits_2(tmp_path, data_dir, capsys):
    rc, _ = _run(tmp_path, data_dir, "noproj", ["--projection"])
    assert rc == 2
    assert "d_out" in capsys.readouterr().err


def test_locked_out_dir_exits_1(tmp_path, data_dir, capsys):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").touch()
    rc = main(["run", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c")] + _dataset_flags(data_dir))
    assert rc == 1
    assert "locked" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Config file layering


def test_config_file_applies_and_flags_win(tmp_path, data_dir):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"graph": {"alpha": 0.5}, "m": 1}))
    rc, out = _run(tmp_path, data_dir, "cfg",
                   ["--config", str(config), "--alpha", "0.7"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["graph"]["alpha"] == 0.7  # flag beats file
    assert manifest["config"]["m"] == 1                 # file beats default


def test_config_unknown_key_exits_2(tmp_path, data_dir, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"graph": {"alhpa": 0.5}}))
    rc, _ = _run(tmp_path, data_dir, "badcfg", ["--config", str(config)])
    assert rc == 2
    assert "unknown config key 'graph.alhpa'" in capsys.readouterr().err


def test_config_invalid_json_exits_2(tmp_path, data_dir, capsys):
    config = tmp_path / "cfg.json"
    config.write_text("{not json")
    rc, _ = _run(tmp_path, data_dir, "badjson", ["--config", str(config)])
    assert rc == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_config_missing_file_exits_2(tmp_path, data_dir):
    rc, _ = _run(tmp_path, data_dir, "nocfg",
                 ["--config", str(tmp_path / "absent.json")])
    assert rc == 2


# ---------------------------------------------------------------------------
# ablate / sweep-m / gridsearch


def test_ablate_writes_eight_rows(tmp_path, data_dir, capsys):
    out = tmp_path / "ablate"
    rc = main(["ablate", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c")] + _dataset_flags(data_dir))
    assert rc == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "use_dist,use_seq,use_latent,median_error_m,acc_at_threshold"
    assert len(lines) == 9
    flags = [tuple(line.split(",")[:3]) for line in lines[1:]]
    assert flags[0] == ("0", "0", "0")
    assert flags[-1] == ("1", "1", "1")
    assert len(set(flags)) == 8


def test_sweep_m_writes_table_and_plot_data(tmp_path, data_dir):
    out = tmp_path / "sweep"
    rc = main(["sweep-m", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c"), "--m-values", "0,2"]
              + _dataset_flags(data_dir))
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "m,acc_at_threshold,median_error_m"
    assert len(lines) == 3
    plot = (out / "sweep_plot.dat").read_text().splitlines()
    assert [row.split("\t")[0] for row in plot] == ["0", "2"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["m_values"] == [0, 2]


def test_sweep_m_default_runs_zero_through_ten(tmp_path, data_dir):
    out = tmp_path / "sweep-default"
    rc = main(["sweep-m", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c")] + _dataset_flags(data_dir))
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 12
    assert lines[1].startswith("0,") and lines[-1].startswith("10,")


def test_gridsearch_reports_best_cell(tmp_path, data_dir, capsys):
    out = tmp_path / "grid"
    rc = main(["gridsearch", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c"), "--grid-alpha", "0.2,0.3",
               "--grid-m", "0,2"] + _dataset_flags(data_dir))
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "evaluated 4 grid cells" in stdout
    assert "best: alpha=" in stdout and "beta1=" in stdout
    lines = (out / "gridsearch.csv").read_text().splitlines()
    assert len(lines) == 5
    best = json.loads((out / "best_params.json").read_text())
    assert best["graph"]["alpha"] in (0.2, 0.3)
    assert best["m"] in (0, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["grid"] == {"alpha": [0.2, 0.3], "m": [0, 2]}


def test_gridsearch_without_grid_exits_2(tmp_path, data_dir, capsys):
    out = tmp_path / "nogrid"
    rc = main(["gridsearch", "--out-dir", str(out), "--cache-dir",
               str(tmp_path / "c")] + _dataset_flags(data_dir))
    assert rc == 2
    assert "grid" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Misc


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_run_flag_toggles_reach_the_manifest(tmp_path, data_dir):
    rc, out = _run(tmp_path, data_dir, "toggles",
                   ["--no-include-latent", "--include-self-edges",
                    "--decay-sign", "positive", "--query-gps"])
    assert rc == 0
    graph = json.loads((out / "manifest.json").read_text())["config"]["graph"]
    assert graph["include_latent"] is False
    assert graph["include_self_edges"] is True
    assert graph["decay_sign"] == "positive"
