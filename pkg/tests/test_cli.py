import csv
import io
import json
import subprocess
import sys

import pytest

from timeontask.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main

SPEC = {
    "n_users": 8,
    "intervals_per_user": [60, 120],
    "seed": 5,
    "components": [
        {"weight": 0.2, "mu": 1.0, "sigma": 0.5},
        {"weight": 0.6, "mu": 3.5, "sigma": 0.5},
        {"weight": 0.2, "mu": 7.0, "sigma": 0.6, "label": "off"},
    ],
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps(SPEC))
    spec = dict(SPEC, resource_labels={"video": 1, "problem": 1})
    (d / "spec_res.json").write_text(json.dumps(spec))
    assert main(["simulate", "--spec", str(d / "spec.json"), "--out", str(d / "log.csv"),
                 "--truth-out", str(d / "truth.csv")]) == EXIT_OK
    assert main(["simulate", "--spec", str(d / "spec_res.json"), "--out", str(d / "log_res.csv")]) == EXIT_OK
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(workdir):
    rows = read_csv(workdir / "log.csv")
    truth = read_csv(workdir / "truth.csv")
    assert len(truth) == 8
    assert sum(int(t["n_intervals"]) + 1 for t in truth) == len(rows)
    assert set(read_csv(workdir / "log_res.csv")[0]) == {"user_id", "timestamp", "resource_type"}


def test_simulate_is_deterministic(workdir, tmp_path):
    main(["simulate", "--spec", str(workdir / "spec.json"), "--out", str(tmp_path / "again.csv")])
    assert (tmp_path / "again.csv").read_bytes() == (workdir / "log.csv").read_bytes()


def test_estimate_table(workdir, tmp_path):
    out, fits, drops = tmp_path / "est.csv", tmp_path / "fits.json", tmp_path / "drops.csv"
    code = main(["estimate", "--input", str(workdir / "log.csv"), "--out", str(out),
                 "--fits-out", str(fits), "--drops-out", str(drops)])
    assert code == EXIT_OK
    rows = read_csv(out)
    dropped = read_csv(drops)
    assert len(rows) + len(dropped) == 8
    assert all(r["reason"] for r in dropped)
    for r in rows:
        if r["T_s"]:
            assert float(r["T_s"]) <= float(r["net_time_s"]) + 1e-6
    assert set(json.loads(fits.read_text())) == {r["user_id"] for r in rows}


def test_estimate_json_format(workdir, capsys):
    assert main(["estimate", "--input", str(workdir / "log.csv"), "--format", "json", "--k-range", "3"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert len(data) == 8 and all(d["K"] == 3 for d in data)


def test_threshold_from_cache_matches_fresh(workdir, tmp_path):
    fits = tmp_path / "fits.json"
    main(["estimate", "--input", str(workdir / "log.csv"), "--out", str(tmp_path / "e.csv"), "--fits-out", str(fits)])
    fresh, cached = tmp_path / "fresh.csv", tmp_path / "cached.csv"
    assert main(["threshold", "--input", str(workdir / "log.csv"), "--out", str(fresh)]) == EXIT_OK
    assert main(["threshold", "--input", str(workdir / "log.csv"), "--fits", str(fits), "--out", str(cached)]) == EXIT_OK
    a, b = read_csv(fresh), read_csv(cached)
    assert a[0]["cohort"] == "all"
    assert float(a[0]["mean_tau_seconds"]) == pytest.approx(float(b[0]["mean_tau_seconds"]), rel=1e-9)


def test_threshold_cohorts_and_per_resource(workdir, tmp_path):
    users = sorted({r["user_id"] for r in read_csv(workdir / "log_res.csv")})
    cohorts = tmp_path / "cohorts.csv"
    cohorts.write_text("".join(f"{u},{'a' if i % 2 else 'b'}\n" for i, u in enumerate(users)))
    out = tmp_path / "thr.csv"
    code = main(["threshold", "--input", str(workdir / "log_res.csv"), "--cohort-file", str(cohorts),
                 "--per-resource", "--k-range", "3", "--min-clicks", "10", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out)
    assert {r["cohort"] for r in rows} == {"a", "b"}
    assert "all" in {r["category"] for r in rows}


def test_threshold_cache_rejects_per_resource(workdir, tmp_path):
    fits = tmp_path / "fits.json"
    fits.write_text("{}")
    assert main(["threshold", "--input", str(workdir / "log.csv"), "--fits", str(fits), "--per-resource"]) == EXIT_CONFIG


def test_report_outputs(workdir, tmp_path):
    out, summary, fig = tmp_path / "r.json", tmp_path / "s.txt", tmp_path / "fig"
    code = main(["report", "--input", str(workdir / "log.csv"), "--out", str(out),
                 "--summary-out", str(summary), "--figure-data", str(fig), "--jobs", "2"])
    assert code == EXIT_OK
    data = json.loads(out.read_text())
    assert data["n_users_total"] == 8
    assert "aggregate gof" in summary.read_text()
    assert (fig / "thresholds_by_user.csv").exists()


def test_tab_delimiter(workdir, tmp_path):
    tsv = tmp_path / "log.tsv"
    tsv.write_text((workdir / "log.csv").read_text().replace(",", "\t"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["estimate", "--input", str(workdir / "log.csv"), "--out", str(a)])
    assert main(["estimate", "--input", str(tsv), "--delimiter", "\\t", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "--min-clicks", "0"],
        ["estimate", "--min-interval", "10", "--max-interval", "1"],
        ["estimate", "--jobs", "0"],
        ["estimate", "--delimiter", "ab"],
    ],
)
def test_bad_configuration_exit_code(workdir, argv):
    assert main(argv + ["--input", str(workdir / "log.csv")]) == EXIT_CONFIG


def test_missing_column_exit_code(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("user,when\na,1\n")
    assert main(["estimate", "--input", str(p)]) == EXIT_CONFIG


def test_bad_generator_spec_exit_code(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text("{not json")
    assert main(["simulate", "--spec", str(p)]) == EXIT_CONFIG


def test_missing_file_exit_code(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "nope.csv")]) == EXIT_IO


def test_empty_log(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert main(["estimate", "--input", str(p)]) == EXIT_OK
    assert capsys.readouterr().out.strip().count("\n") == 0


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "timeontask.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "estimate" in res.stdout
