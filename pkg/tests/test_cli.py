import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesslab import io
from hesslab.cli import main


def test_hmat_round_trip(tmp_path):
    M = np.random.default_rng(0).standard_normal((3, 4))
    p = tmp_path / "m.hmat"
    io.write_matrix_dump(p, M)
    back = io.read_matrix_dump(p)
    assert np.array_equal(M, back)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                min_size=1, max_size=12))
def test_hmat_round_trips_arbitrary_doubles(tmp_path_factory, vals):
    M = np.array([vals])
    p = tmp_path_factory.mktemp("h") / "m.hmat"
    io.write_matrix_dump(p, M)
    assert np.array_equal(io.read_matrix_dump(p), M)


def test_hmat_one_third_exact(tmp_path):
    p = tmp_path / "t.hmat"
    io.write_matrix_dump(p, np.array([[1.0 / 3.0]]))
    assert io.read_matrix_dump(p)[0, 0] == 1.0 / 3.0


def test_hmat_malformed_header(tmp_path):
    p = tmp_path / "bad.hmat"
    p.write_text("HMAT 2 1 1\n0\n")
    with pytest.raises(io.MalformedHeaderError):
        io.read_matrix_dump(p)


def test_hmat_dimension_mismatch(tmp_path):
    p = tmp_path / "dim.hmat"
    p.write_text("HMAT 1 2 2\n1 2\n3 4\n5 6\n")
    with pytest.raises(io.DimensionMismatchError):
        io.read_matrix_dump(p)


def test_hmat_parse_failure(tmp_path):
    p = tmp_path / "nan.hmat"
    p.write_text("HMAT 1 1 2\n1 oops\n")
    with pytest.raises(io.ParseFailureError):
        io.read_matrix_dump(p)


def test_labels_round_trip(tmp_path):
    p = tmp_path / "lab.csv"
    io.write_labels_csv(p, np.array([3, 1, 2]))
    assert list(io.read_labels_csv(p)) == [3, 1, 2]


def test_gen_data_writes_outputs_and_manifest(tmp_path):
    out = tmp_path / "run"
    rc = main(["gen-data", "--kind", "gaussian", "--d", "8", "--N", "16", "--C", "3",
               "--seed", "5", "--out", str(out)])
    assert rc == 0
    X = io.read_matrix_dump(f"{out}_X.hmat")
    assert X.shape == (8, 16)
    man = io.read_json(f"{out}_manifest.json")
    assert man["command"] == "gen-data"
    assert man["root_seed"] == 5
    for entry in man["outputs"]:
        assert io.sha256_of(entry["path"]) == entry["checksum"]


def test_rerun_is_byte_identical(tmp_path):
    args = ["limits", "--target", "g_ii", "--gamma", "1", "--C", "8",
            "--samples", "20000", "--seed", "3"]
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag / "run"
        assert main(args + ["--out", str(out)]) == 0
        outs.append(open(f"{out}_limit.json", "rb").read())
    assert outs[0] == outs[1]


def test_limits_cli_value_sane(tmp_path):
    out = tmp_path / "g"
    assert main(["limits", "--target", "g_ii", "--gamma", "1", "--C", "64",
                 "--samples", "50000", "--seed", "0", "--out", str(out)]) == 0
    rec = io.read_json(f"{out}_limit.json")
    assert rec["method"] == "monte_carlo"
    assert 0 < 64**2 * rec["value"] < math.e + 1.5


def test_limits_cli_closed_form(tmp_path):
    out = tmp_path / "u"
    assert main(["limits", "--target", "u_ii", "--gamma", "1", "--C", "512", "--m", "8",
                 "--limit", "--out", str(out)]) == 0
    rec = io.read_json(f"{out}_limit.json")
    assert rec["value"] == pytest.approx(3.0 / 256)
    assert rec["std_error"] == 0.0


def test_hessian_cli_full_with_heatmap(tmp_path):
    out = tmp_path / "h"
    rc = main(["hessian", "--model", "mlp", "--loss", "ce", "--d", "10", "--m", "3",
               "--C", "4", "--N", "12", "--full", "--heatmap", "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    H = io.read_matrix_dump(f"{out}_hessian.hmat")
    lay = io.read_json(f"{out}_layout.json")
    assert H.shape[0] == lay["side"] == 3 * 10 + 4 * 3
    A = io.read_matrix_dump(f"{out}_heatmap.hmat")
    assert np.array_equal(A, np.abs(H))
    side = io.read_json(f"{out}_heatmap.json")
    assert side["min"] >= 0.0
    pgm = open(f"{out}_heatmap.pgm").read().split()
    assert pgm[0] == "P2" and int(pgm[1]) == lay["side"]


def test_hessian_cli_memory_cap(tmp_path):
    out = tmp_path / "cap"
    rc = main(["hessian", "--model", "mlp", "--loss", "mse", "--d", "500", "--m", "8",
               "--C", "500", "--N", "10", "--full", "--out", str(out)])
    assert rc == 1


def test_hessian_cli_single_block(tmp_path):
    out = tmp_path / "blk"
    rc = main(["hessian", "--model", "mlp", "--loss", "ce", "--d", "10", "--m", "3",
               "--C", "4", "--N", "12", "--block", "wv", "1", "2", "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    B = io.read_matrix_dump(f"{out}_block_wv_1_2.hmat")
    assert B.shape == (10, 3)


def test_spectrum_cli_roundtrip(tmp_path):
    mat = tmp_path / "m.hmat"
    gen = np.random.default_rng(1)
    A = gen.standard_normal((6, 6))
    io.write_matrix_dump(mat, A + A.T)
    out = tmp_path / "s"
    assert main(["spectrum", "--matrix", str(mat), "--out", str(out)]) == 0
    lines = open(f"{out}_spectrum.csv").read().strip().splitlines()
    assert lines[0] == "eigenvalue"
    assert len(lines) == 7


def test_spectrum_cli_gmp_solver(tmp_path):
    out = tmp_path / "g"
    rc = main(["spectrum", "--gmp-atoms", "0:0.5,1:0.5", "--gamma", "1",
               "--z", "2+1j", "--z", "0.5+0.25j", "--out", str(out)])
    assert rc == 0
    recs = io.read_json(f"{out}_stieltjes.json")
    assert len(recs) == 2
    assert all(r["s_im"] > 0 and r["residual"] < 1e-10 for r in recs)


def test_spectrum_cli_nonconvergence_exit_2(tmp_path):
    out = tmp_path / "nc"
    rc = main(["spectrum", "--gmp-atoms", "0:0.5,1:0.5", "--gamma", "1",
               "--z", "2+1j", "--max-iter", "2", "--out", str(out)])
    assert rc == 2


def test_decay_cli(tmp_path):
    out = tmp_path / "d"
    rc = main(["decay", "--case", "linear_ce", "--d", "64", "--N", "64",
               "--grid", "8,32", "--trials", "5", "--seed", "1", "--out", str(out)])
    assert rc == 0
    fit = io.read_json(f"{out}_fit.json")
    assert fit["slope"] < -1.0
    lines = open(f"{out}_decay.csv").read().splitlines()
    assert lines[0] == io.DECAY_HEADER
    assert len(lines) == 3


def test_concentration_cli(tmp_path):
    out = tmp_path / "c"
    rc = main(["concentration", "--case", "linear_ce", "--d", "50", "--N", "50",
               "--C", "4,8", "--trials", "5", "--theory-samples", "10000",
               "--seed", "2", "--out", str(out)])
    assert rc == 0
    lines = open(f"{out}_concentration.csv").read().splitlines()
    assert lines[0] == io.CONCENTRATION_HEADER
    assert len(lines) == 11
    theory = io.read_json(f"{out}_theory.json")
    assert {c["C"] for c in theory["H11"]["curve"]} == {4, 8}
    assert theory["H11"]["limit"] == pytest.approx(math.e + 1)


def test_decouple_cli(tmp_path):
    out = tmp_path / "dc"
    rc = main(["decouple-check", "--which", "ii", "--d", "100", "--N", "100",
               "--reps", "2", "--seed", "0", "--out", str(out)])
    assert rc == 0
    rep = io.read_json(f"{out}_decouple.json")
    assert rep["kind"] == "bernoulli_ii" and rep["reps"] == 2


def test_train_cli(tmp_path):
    out = tmp_path / "t"
    rc = main(["train", "--d", "8", "--m", "3", "--C", "3", "--N", "12",
               "--steps", "20", "--snapshots", "0,0.5,1.0", "--seed", "1",
               "--out", str(out)])
    assert rc == 0
    lines = open(f"{out}_trace.csv").read().splitlines()
    assert lines[0] == io.TRACE_HEADER
    assert len(lines) == 4


def test_mc_oracle_cli(tmp_path):
    out = tmp_path / "o"
    rc = main(["mc-oracle", "--target", "g_ii_c2", "--samples", "50000",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    rec = io.read_json(f"{out}_oracle.json")
    assert abs(rec["value"] - 0.06999) < 0.01


def test_unknown_subcommand_and_bad_flag():
    assert main(["frobnicate"]) == 1
    assert main(["limits", "--target", "nope", "--out", "/tmp/x"]) == 1


def test_validation_error_exit_1(tmp_path):
    out = tmp_path / "v"
    rc = main(["gen-data", "--kind", "gaussian", "--d", "0", "--N", "5", "--C", "3",
               "--out", str(out)])
    assert rc == 1
