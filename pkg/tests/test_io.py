import json
import math

import numpy as np
import pytest

from svbvar.data import Panel, build_var_data
from svbvar.gibbs import RunConfig, run_chain
from svbvar.io import (
    VARIABLE_TABLE,
    ConfigError,
    IngestError,
    MissingVariableError,
    RaggedRowError,
    RunManifest,
    config_digest,
    dumps_json,
    ingest_csv,
    load_config,
    parse_config,
    preset_variables,
    write_draws_csv,
    write_panel_csv,
)
from svbvar.priors import EquationPrior

SEVEN = [
    "Real Gross Domestic Product",
    "Industrial Production Index",
    "Civilian Unemployment Rate",
    "Consumer Price Index for All Urban Consumers: All Items",
    "Real Average Hourly Earnings of Production and Nonsupervisory Employees: Manufacturing",
    "Effective Federal Funds Rate",
    "10-Year Treasury Constant Maturity Rate",
]


def quarters(first=1959, last=2019):
    return [f"{y}-{m:02d}-01" for y in range(first, last + 1) for m in (1, 4, 7, 10)]


def cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows):
    rows = [[cell(v) for v in r] for r in rows]
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n", encoding="utf-8")


def test_presets_follow_table_order():
    assert [nm for nm, _ in preset_variables(7)] == SEVEN
    assert len(preset_variables(15)) == 15
    assert len(preset_variables(30)) == len(VARIABLE_TABLE) == 30
    names15 = [nm for nm, _ in preset_variables(15)]
    assert all(nm in names15 for nm in SEVEN)
    with pytest.raises(ConfigError):
        preset_variables(8)


def test_calendar_rows_and_identity_transform(tmp_path):
    dates = quarters()
    assert len(dates) == 244
    rng = np.random.default_rng(0)
    gdp = np.exp(np.cumsum(rng.normal(0.005, 0.01, 244)) + 8)
    unemp = rng.uniform(3, 10, 244)
    path = tmp_path / "q.csv"
    write_csv(path, ["date", "GDPC1", "UNRATE"], [[d, g, u] for d, g, u in zip(dates, gdp, unemp)])
    panel = ingest_csv(path, {"GDPC1": "dlog400", "UNRATE": "none"})
    assert panel.rows == 243
    assert panel.dates[0] == "1959-04-01" and panel.dates[-1] == "2019-10-01"
    np.testing.assert_array_equal(panel.values[:, 1], unemp[1:])
    np.testing.assert_allclose(panel.values[:, 0], 400 * np.diff(np.log(gdp)), rtol=1e-12)


def test_preset_with_mnemonic_mapping(tmp_path):
    rng = np.random.default_rng(1)
    mnemonics = ["GDPC1", "INDPRO", "UNRATE", "CPIAUCSL", "AHETPIx", "FEDFUNDS", "GS10"]
    cols = {m: rng.uniform(1, 10, 30) for m in mnemonics}
    path = tmp_path / "fred.csv"
    header = ["date", *reversed(mnemonics), "EXTRA"]
    rows = [[d, *(cols[m][t] for m in reversed(mnemonics)), "1"] for t, d in enumerate(quarters(2000, 2007)[:30])]
    write_csv(path, header, rows)
    panel = ingest_csv(path, dict(zip(SEVEN, mnemonics)), preset=7)
    assert list(panel.names) == SEVEN
    assert panel.rows == 29
    np.testing.assert_array_equal(panel.values[:, 2], cols["UNRATE"][1:])


def test_ingest_errors(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, ["date", "a", "b"], [["2000-01-01", 1, 2], ["2000-04-01", 1]])
    with pytest.raises(RaggedRowError, match=":3"):
        ingest_csv(path, {"a": "none"})
    write_csv(path, ["date", "a"], [["2000-01-01", 1], ["2000-04-01", 2]])
    with pytest.raises(MissingVariableError, match="zz"):
        ingest_csv(path, {"zz": "none"})
    with pytest.raises(MissingVariableError):
        ingest_csv(path, {"a": "none"}, preset=7)
    write_csv(path, ["date", "a"], [["2000-01-01", 1], ["2000-04-01", -2], ["2000-07-01", 3]])
    with pytest.raises(IngestError, match="index 1"):
        ingest_csv(path, {"a": "dlog400"})
    write_csv(path, ["date", "a"], [["2000-01-01", "x"]])
    with pytest.raises(IngestError, match="non-numeric"):
        ingest_csv(path, {"a": "none"})
    with pytest.raises(ConfigError):
        ingest_csv(path, {"a": {"transform": "cube"}})


def test_serialize_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    raw = np.exp(rng.normal(0, 1, (40, 3)).cumsum(axis=0) * 0.01 + 2)
    path = tmp_path / "raw.csv"
    write_csv(path, ["date", "x", "y", "z"], [[d, *r] for d, r in zip(quarters(1990, 1999), raw)])
    first = ingest_csv(path, {"x": "dlog400", "y": "none", "z": "d2log"})
    out = tmp_path / "panel.csv"
    write_panel_csv(first, out)
    second = ingest_csv(out, {nm: "none" for nm in first.names})
    np.testing.assert_allclose(second.values, first.values, rtol=1e-12, atol=0)
    assert second.dates == first.dates


CONFIG = """
seed = 11
threads = 2

[data]
path = "panel.csv"
preset = 7
p = 2

[sampler]
model = "sv"
burn_in = 10
keep = 20
fixed_kappa = 0.04

[estimators]
R = 50
gd_variant = "gd1"

[forecast]
origins = [30, 35]
horizons = [1, 4]

[mc]
dgp = "fsv"
r = 2
candidates = ["csv", "sv", "fsv:2"]
"""


def test_config_sections_and_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(CONFIG, encoding="utf-8")
    s = load_config(path)
    assert (s.seed, s.threads, s.data_path, s.preset, s.p) == (11, 2, "panel.csv", 7, 2)
    assert (s.model, s.burn_in, s.keep, s.fixed_kappa, s.R, s.gd_variant) == ("sv", 10, 20, 0.04, 50, "gd1")
    assert s.origins == (30, 35) and s.horizons == (1, 4) and s.dgp_r == 2
    assert s.candidates == ("csv", "sv", "fsv:2")
    assert load_config(path, seed=5, model=None).seed == 5
    assert load_config(None).model == "csv"


@pytest.mark.parametrize("doc", [
    {"sampler": {"modle": "csv"}},
    {"bogus": 1},
    {"sampler": {"model": "garch"}},
    {"forecast": {"horizons": [2]}},
    {"sampler": {"keep": 0}},
    {"sampler": {"burn_in": 1.5}},
    {"mc": {"candidates": ["fsv:x"]}},
    {"estimators": {"gd_alpha": 1.5}},
    {"data": {"preset": 8}},
])
def test_config_rejections(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_bad_config_file(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("seed = = 1", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_json_floats_round_trip_exactly():
    rng = np.random.default_rng(3)
    xs = rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200)
    doc = {"values": xs, "nan": float("nan"), "inf": -math.inf, "nested": [{"a": np.float64(0.1)}], "flag": True}
    text = dumps_json(doc)
    back = json.loads(text)
    assert [float(v) for v in back["values"]] == xs.tolist()
    assert math.isnan(back["nan"]) and back["inf"] == -math.inf
    assert back["nested"][0]["a"] == 0.1 and back["flag"] is True
    assert text == dumps_json(doc)
    with pytest.raises(TypeError):
        dumps_json({"x": object()})


def test_digest_ignores_key_order():
    a = {"x": 1, "y": {"b": 2, "a": [1, 2]}}
    b = {"y": {"a": [1, 2], "b": 2}, "x": 1}
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest({**a, "x": 2})


def test_manifest_lists_existing_outputs(tmp_path):
    out = tmp_path / "res.json"
    out.write_text("{}")
    m = RunManifest("ml", {"seed": 1}, 1, {"total_seconds": 0.1}, [str(out)])
    doc = json.loads(m.write(tmp_path).read_text())
    assert doc["outputs"] == [str(out)] and doc["status"] == "ok" and len(doc["config_digest"]) == 64
    assert doc["code_version"]
    with pytest.raises(FileNotFoundError):
        RunManifest("ml", {}, 1, outputs=[str(tmp_path / "missing.json")]).write(tmp_path)


def test_draw_table_labels(tmp_path):
    data = build_var_data(np.random.default_rng(4).standard_normal((21, 2)), 1)
    chain = run_chain("sv", data, EquationPrior(np.ones(2), 1), RunConfig("sv", burn_in=2, keep=3, p=1))
    path = write_draws_csv(chain, tmp_path / "draws.csv")
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert "alpha[0][2]" in header and "beta" in header[6] and not any(h.startswith("h[") for h in header)
    assert len(lines) == 4
    full = write_draws_csv(chain, tmp_path / "all.csv", include_latent=True).read_text().splitlines()[0]
    assert "h[1][19]" in full


def test_panel_dates_validated():
    with pytest.raises(ValueError):
        Panel(np.zeros((2, 1)), ("a",), ("none",), dates=("x",))
