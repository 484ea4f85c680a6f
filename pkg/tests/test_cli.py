import json

import pandas as pd
import pytest

from instances import generate_potts, save_model
from main import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.uai"
    assert main(["gen-potts", "--size", "3", "--states", "2", "--sigma", "0.5", "--seed", "1",
                 "--out", str(path)]) == EXIT_OK
    return path


def test_gen_potts_writes_a_uai_grid(capsys, grid_file):
    text = grid_file.read_text()
    assert text.startswith("MARKOV\n9\n")
    assert "wrote 3x3 Potts grid" in capsys.readouterr().out


def test_solve_writes_trace_and_result(grid_file, tmp_path):
    trace, out = tmp_path / "trace.csv", tmp_path / "result.json"
    code = main(["solve", "--model", str(grid_file), "--trace", str(trace), "--out", str(out), "--quiet"])
    record = json.loads(out.read_text())
    assert code == (EXIT_OK if record["status"] == "converged" else EXIT_NOT_CONVERGED)
    assert len(record["assignment"]) == 9
    assert record["wall_time"] is None
    frame = pd.read_csv(trace)
    assert list(frame.columns)[:3] == ["outer", "dc_iter", "rho"]
    assert frame["seconds"].isna().all()
    assert list(frame["outer"]) == sorted(frame["outer"])


@pytest.mark.parametrize("method", ["uniform", "tree"])
def test_solve_output_is_reproducible(grid_file, tmp_path, method):
    outputs = []
    for run in range(2):
        trace, out = tmp_path / f"trace{run}.csv", tmp_path / f"result{run}.json"
        main(["solve", "--model", str(grid_file), "--method", method, "--trace", str(trace),
              "--out", str(out), "--quiet"])
        outputs.append((trace.read_bytes(), out.read_bytes()))
    assert outputs[0] == outputs[1]


def test_solve_prints_a_report(grid_file, capsys):
    main(["solve", "--model", str(grid_file), "--max-outer", "2"])
    out = capsys.readouterr().out
    assert "LPQP-U RESULT" in out
    assert "Rounded energy" in out


def test_outer_cap_exits_with_two(grid_file):
    assert main(["solve", "--model", str(grid_file), "--max-outer", "1", "--quiet"]) == EXIT_NOT_CONVERGED


def test_batch_solve_writes_a_sorted_summary(tmp_path):
    models = tmp_path / "models"
    models.mkdir()
    for seed in (2, 1):
        save_model(generate_potts(2, 2, 0.5, seed), models / f"p{seed}.json")
    (models / "notes.txt").write_text("skipped")
    out = tmp_path / "results"
    main(["solve", "--model", str(models), "--out", str(out), "--quiet"])
    summary = pd.read_csv(out / "summary.csv")
    assert list(summary["instance"]) == ["p1.json", "p2.json"]
    assert (out / "p1.json").exists() and (out / "p2.json").exists()


def test_brute_force_prints_the_optimum(tmp_path, capsys):
    path = tmp_path / "pair.json"
    path.write_text(json.dumps({"cardinalities": [2, 2], "unaries": [[0, 0.1], [0, 0.1]],
                                "edges": [{"i": 0, "j": 1, "table": [[-1, 0], [0, -1]]}]}))
    assert main(["brute-force", "--model", str(path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["assignment: 0 0", "energy: -1"]


def test_score_command(capsys):
    assert main(["score", "--energies", "-5", "-10", "-20"]) == EXIT_OK
    scores = [float(line.split("\t")[1]) for line in capsys.readouterr().out.splitlines()]
    assert scores == pytest.approx([0.0, 1 / 3, 1.0])


def test_oracle_gibbs_writes_marginals(grid_file, tmp_path):
    out = tmp_path / "gibbs.json"
    assert main(["oracle-gibbs", "--model", str(grid_file), "--temperature", "1.0", "--out", str(out)]) == EXIT_OK
    record = json.loads(out.read_text())
    assert len(record["node_marginals"]) == 9
    assert sum(record["node_marginals"][0]) == pytest.approx(1.0)


def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        main(["solve", "--model", "x.uai", "--bogus"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["solve", "--model", "x.uai", "--rho0", "fast"])
    assert info.value.code == EXIT_USAGE


def test_bad_inputs_exit_with_one(tmp_path, capsys):
    assert main(["solve", "--model", str(tmp_path / "missing.uai")]) == EXIT_USAGE
    bad = tmp_path / "bad.uai"
    bad.write_text("MARKOV\n3\n2 2 2\n1\n3 0 1 2\n8\n1 1 1 1 1 1 1 1\n")
    assert main(["solve", "--model", str(bad)]) == EXIT_USAGE
    assert "factor 0" in capsys.readouterr().err
    assert main(["solve", "--model", str(bad), "--rho-factor", "0.5"]) == EXIT_USAGE
