import csv
import io
import json
import shutil
import subprocess
import sys

import pytest

from padic_fk.cli import main
from padic_fk.config import ConfigError, default_config, load_config

SMALL_KERNEL = """
schema_version = 1
t = [1.0]
[mc]
paths = 5000
steps = 4
[kernel]
y = ["0", "1/2"]
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(argv, capsys):
    code = main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_show_config_round_trips(tmp_path, capsys):
    code, text, _ = run(["--show-config", "--seed", "7"], capsys)
    assert code == 0 and "seed = 7" in text
    again = load_config(write(tmp_path, text))
    assert again.section("mc")["seed"] == 7
    assert again.raw == default_config().with_overrides(**{"mc.seed": 7}).raw


def test_density_pmf_sums_to_one(capsys):
    code, text, _ = run(["density"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["t", "r", "a_r", "f", "pmf", "cdf"]
    assert abs(sum(float(r["pmf"]) for r in rows) - 1) < 1e-10


def test_density_validate_writes_report(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["density", "--validate", "--out", str(out)], capsys)
    assert code == 0
    rep = json.loads((out / "density_validation.json").read_text())
    assert rep["passed"] is True


def test_validate_passes_and_lists_checks(tmp_path, capsys):
    code, text, _ = run(["validate"], capsys)
    rep = json.loads(text)
    assert code == 0 and rep["passed"]
    ids = {c["id"] for c in rep["checks"]}
    assert {"character_ball_integral", "heat_kernel_normalization", "finite_model_closed_form",
            "quaternion_algebra"} <= ids


def test_tampered_tolerance_names_the_key(tmp_path, capsys):
    cfg = write(tmp_path, "schema_version = 1\n[tolerances]\neps = 10.0\n")
    code, text, _ = run(["validate", "--config", cfg], capsys)
    assert code == 1
    failed = [c for c in json.loads(text)["checks"] if not c["passed"]]
    assert failed and all(c["key"] == "tolerances.eps" and c["keys"][0] == "tolerances.eps" for c in failed)


@pytest.mark.parametrize("text,key", [
    ("schema_version = 1\np = 4\n", "p"),
    ("schema_version = 1\nbogus = 1\n", "bogus"),
    ("schema_version = 2\n", "schema_version"),
    ("schema_version = 1\n[mc]\npaths = 1\n", "mc.paths"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, key):
    code, _, err = run(["density", "--config", write(tmp_path, text)], capsys)
    assert code == 2 and f"[{key}]" in err
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text, "again.toml"))


def test_unparseable_toml_exit_2(tmp_path, capsys):
    code, _, err = run(["density", "--config", write(tmp_path, "p = = 3")], capsys)
    assert code == 2


def test_range_error_exit_3(tmp_path, capsys):
    code, _, err = run(["density", "--config", write(tmp_path, "schema_version = 1\nb = 1e-4\n")], capsys)
    assert code == 3 and "range" in err


def test_kernel_agrees_with_closed_form(tmp_path, capsys):
    code, text, _ = run(["kernel", "--config", write(tmp_path, SMALL_KERNEL)], capsys)
    rep = json.loads(text)
    assert code == 0 and len(rep["records"]) == 2
    assert all("closed_form" in r and "oracle" in r for r in rep["records"])


def test_kernel_disagreement_exit_4(tmp_path, capsys):
    # one Trotter step against the exact oracle for a strong well: a real bias
    text = SMALL_KERNEL.replace("steps = 4", "steps = 1").replace("paths = 5000", "paths = 20000")
    text += '[potential]\nkind = "indicator"\nvalue = 6.0\nradius = 0\n'
    code, out, err = run(["kernel", "--config", write(tmp_path, text)], capsys)
    assert code == 4 and "disagreement" in err
    assert json.loads(out)["max_z"] > 5


def test_outputs_byte_identical_across_threads(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_KERNEL)
    blobs = []
    for k in (1, 2, 8):
        out = tmp_path / f"t{k}"
        assert run(["kernel", "--config", cfg, "--threads", str(k), "--out", str(out)], capsys)[0] == 0
        blobs.append((out / "kernel.csv").read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_seed_changes_and_repeats(tmp_path, capsys):
    cfg = write(tmp_path, "schema_version = 1\n[mc]\npaths = 200\nsteps = 4\n[paths]\ndump = 5\n")
    outs = []
    for seed in (1, 1, 2):
        out = tmp_path / f"s{len(outs)}"
        assert run(["paths", "--config", cfg, "--seed", str(seed), "--out", str(out)], capsys)[0] == 0
        outs.append((out / "paths.csv").read_bytes())
    assert outs[0] == outs[1] != outs[2]
    summary = json.loads((tmp_path / "s0" / "paths_summary.json").read_text())
    assert summary["rng"]["seed"] == 1


def test_paths_moments_file(tmp_path, capsys):
    out = tmp_path / "m"
    cfg = write(tmp_path, "schema_version = 1\n[mc]\npaths = 2000\nsteps = 4\n")
    assert run(["paths", "--config", cfg, "--out", str(out)], capsys)[0] == 0
    header = (out / "paths_moments.csv").read_text().splitlines()[0]
    assert header == "t_j,k,mc_moment,stderr,exact_moment,ratio,moment_over_t_k_b"


def test_profile_and_model(tmp_path, capsys):
    code, text, _ = run(["profile"], capsys)
    assert code == 0 and text.splitlines()[0] == "r,a_r,log_p_a_r,measure"
    cfg = write(tmp_path, 'schema_version = 1\np = 3\n[profile]\nkind = "trace_zero"\na = 2\nb = 3\n'
                          'r_lo = -3\nr_hi = 3\n')
    code, text, _ = run(["profile", "--config", cfg], capsys)
    assert code == 0 and len(text.splitlines()) == 8
    out = tmp_path / "model"
    small = write(tmp_path, "schema_version = 1\n[model]\nN = 2\nM = 2\n", "model.toml")
    assert run(["model", "--config", small, "--out", str(out)], capsys)[0] == 0
    assert len((out / "spectrum.csv").read_text().splitlines()) == 17


def test_flags_before_or_after_subcommand(capsys):
    a = run(["--seed", "3", "--show-config"], capsys)[1]
    b = run(["density", "--seed", "3", "--show-config"], capsys)[1]
    assert a == b and "seed = 3" in a


@pytest.mark.skipif(shutil.which("padic-fk") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["padic-fk", "--show-config"], capture_output=True, text=True)
    assert res.returncode == 0 and "schema_version = 1" in res.stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "padic_fk.cli", "density"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("t,r,a_r")
