import textwrap

import pytest
from click.testing import CliRunner

from fpeps.sweep_cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_VALIDATION,
    FIELDS,
    ConfigError,
    main,
    parse_config,
    read_records,
    render,
    run_sweep,
    validate_against_oracle,
)

GAP_GRID = """
grid:
  t: 0.0
  y: {start: 0.5, stop: 1.5, num: 3}
  z: {start: 0.5, stop: 1.5, num: 3}
geometry: {L1: 2, L2: 4}
tasks: [gap]
output: {dir: OUT, format: FMT}
"""


def write(tmp_path, text, fmt="csv", name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text).replace("OUT", str(tmp_path / "out")).replace("FMT", fmt))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


# ------------------------------------------------------------------ config


def test_parse_axes_and_overrides():
    cfg = parse_config(GAP_GRID.replace("FMT", "csv"), workers=3, fmt="json")
    assert cfg.t == (0.0,) and cfg.y == pytest.approx((0.5, 1.0, 1.5))
    assert len(cfg.points()) == 9 and cfg.geometries() == [(2, 4)]
    assert cfg.workers == 3 and cfg.fmt == "json"


def test_digest_ignores_output_location_and_workers():
    a = parse_config(GAP_GRID.replace("FMT", "csv"))
    b = parse_config(GAP_GRID.replace("FMT", "csv"), workers=4, out="elsewhere")
    assert a.digest() == b.digest()
    assert a.digest() != parse_config(GAP_GRID.replace("FMT", "json")).digest()


@pytest.mark.parametrize("text", [
    "grid: {y: 1, z: [1, 2}\ntasks: [gap]",  # broken YAML
    "grid: {y: 1, z: 1}\ntasks: [teleport]",
    "grid: {y: 1}\ntasks: [gap]",
    "grid: {y: 1, z: 1}\ntasks: [gap]\noutput: {format: xml}",
    "grid: {y: 1, z: {start: 0, stop: 1}}\ntasks: [gap]",
    "- just\n- a list",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_error_reports_location():
    with pytest.raises(ConfigError, match="line"):
        parse_config("grid: {y: 1, z: [1, 2}\ntasks: [gap]", "broken.yaml")


# ------------------------------------------------------------------ sweeps


def test_gap_grid_records():
    records = run_sweep(parse_config(GAP_GRID.replace("FMT", "csv")))
    assert len(records) == 9
    assert all(r["status"] == "ok" and 0 <= r["value"] <= 1 for r in records)
    assert [r["index"] for r in records] == list(range(9))


def test_failed_points_are_quarantined():
    cfg = parse_config("grid: {t: [0.0, 1.0], y: 0.4, z: 0.6}\ngeometry: {L1: 2, L2: 4}\ntasks: [chern, gap]")
    records = run_sweep(cfg)
    assert len(records) == 4
    bad = [r for r in records if r["status"] != "ok"]
    assert len(bad) == 1 and bad[0]["task"] == "chern" and bad[0]["t"] == 0.0
    assert bad[0]["error"].startswith("ParameterError")
    assert next(r for r in records if r["t"] == 1.0 and r["task"] == "chern")["value"] == -2


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_round_trip(fmt):
    records = run_sweep(parse_config("grid: {t: 1, y: [0.4, 2.0], z: 0.6}\ngeometry: {L1: 2, L2: 3}\n"
                                     "tasks: [gap, phase_classify, chern]"))
    head, back = read_records(render(records, {"kind": "sweep"}, fmt), fmt)
    assert head["kind"] == "sweep"
    assert len(back) == len(records)
    for a, b in zip(records, back):
        for k in FIELDS:
            va, vb = a.get(k), b.get(k)
            assert (va in (None, "") and vb in (None, "")) or va == vb


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_empty_record_set(fmt):
    text = render([], {"kind": "sweep"}, fmt)
    _, back = read_records(text, fmt)
    assert back == []
    if fmt == "csv":
        assert text.splitlines()[-1] == ",".join(FIELDS)


# --------------------------------------------------------------------- CLI


def test_cli_sweep_is_deterministic(tmp_path):
    cfg = write(tmp_path, GAP_GRID)
    first = invoke("sweep", cfg, "--out", tmp_path / "a")
    second = invoke("sweep", cfg, "--out", tmp_path / "b", "--workers", 2)
    assert first.exit_code == EXIT_OK and second.exit_code == EXIT_OK
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    assert len(read_records(a.decode(), "csv")[1]) == 9


def test_cli_phase_map(tmp_path):
    cfg = write(tmp_path, "grid: {t: 1, y: [0.4, 5], z: 0.6}\ngeometry: {L1: 2, L2: 3}\n"
                          "tasks: [wilson_table]\noutput: {dir: OUT, format: json}")
    res = invoke("phase-map", cfg)
    assert res.exit_code == EXIT_OK, res.output
    _, rows = read_records((tmp_path / "out" / "phase_map.json").read_text(), "json")
    assert [r["phase"] for r in rows] == ["B", "gapped"]
    assert all(r["gap"] > 0 for r in rows)


def test_cli_partial_failure_exit(tmp_path):
    cfg = write(tmp_path, "grid: {t: 0, y: 0.4, z: 0.6}\ngeometry: {L1: 2, L2: 3}\ntasks: [chern]\n"
                          "output: {dir: OUT}")
    assert invoke("sweep", cfg).exit_code == EXIT_PARTIAL


def test_cli_config_errors(tmp_path):
    assert invoke("sweep", write(tmp_path, "grid: {y: 1, z: 1}\ntasks: [nope]")).exit_code == EXIT_CONFIG
    assert invoke("sweep", tmp_path / "missing.yaml").exit_code == EXIT_CONFIG
    assert invoke("sweep", write(tmp_path, GAP_GRID), "--max-l1", 1).exit_code == EXIT_CONFIG


VALIDATE = "grid: {y: 0.5, z: 0.5}\ntasks: [gap]\noutput: {dir: OUT}\n" \
           "validate: {points: 3, seed: 7, L1: 2, L2: 2, corrupt: CORRUPT}"


def test_validate_agrees_with_oracle():
    rows, worst = validate_against_oracle(parse_config(VALIDATE.replace("CORRUPT", "false")))
    assert worst < 1e-10
    assert rows[0]["t"] == 0.0 and all(r["status"] == "ok" for r in rows)


def test_cli_validate_exit_codes(tmp_path):
    assert invoke("validate", write(tmp_path, VALIDATE.replace("CORRUPT", "false"))).exit_code == EXIT_OK
    bad = write(tmp_path, VALIDATE.replace("CORRUPT", "true"), name="bad.yaml")
    assert invoke("validate", bad).exit_code == EXIT_VALIDATION
