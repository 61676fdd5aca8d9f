import csv
import json
import time
from pathlib import Path

import pytest

from oracles import enumerate_wilcoxon
from mtmlca.cli import main
from mtmlca.errors import ConfigError
from mtmlca.harness import (
    MAPE_HEADER,
    RESULTS_HEADER,
    config_from_dict,
    config_to_dict,
    parse_config,
    run_experiment,
    summarize,
    summarize_rows,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = {
    "settings": [
        {"id": "a", "instance": {"regions": 2, "blocks_per_region": 1,
                                 "n_local": 1, "n_regional": 1, "n_national": 0}},
        {"id": "b", "instance": {"regions": 1, "blocks_per_region": 2,
                                 "n_local": 0, "n_regional": 1, "n_national": 1}},
    ],
    "mlca": {"q_max": 3},
    "model": {"hidden": [4], "epochs": 16},
    "eval": {"n_test": 4, "seed": 1},
    "instances": 3,
    "base_seed": 100,
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# parsing


def test_full_preset_parses_with_defaults():
    with pytest.warns(RuntimeWarning, match="capacity"):
        cfg = parse_config(CONFIGS / "full_98.json")
    assert cfg.mlca.q_max == 10 and cfg.mlca.q_init == cfg.mlca.q_round == 1
    assert cfg.model.lam == 1e-10
    assert (cfg.model.id_dim, cfg.model.id_layer) == (4, 1)
    assert cfg.settings[0].m == 98 and cfg.settings[0].instance.n_bidders == 10


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"settings": TINY["settings"]}))
    assert (cfg.mlca.q_init, cfg.mlca.q_round, cfg.mlca.q_max) == (1, 1, 10)
    assert cfg.model.lam == 1e-10 and cfg.model.id_dim == 4 and cfg.model.id_layer == 1
    assert cfg.n_test == 128 and cfg.instances == 10
    assert cfg.methods == ("baseline", "mt-f", "mt-r")
    assert cfg.train_config("mt-f").inject_id and not cfg.train_config("baseline").inject_id


def test_q_init_above_q_max_names_field(tmp_path):
    with pytest.raises(ConfigError, match="q_init"):
        parse_config(write(tmp_path, {**TINY, "mlca": {"q_init": 5, "q_max": 3}}))


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="qq_max"):
        parse_config(write(tmp_path, {**TINY, "mlca": {"qq_max": 3}}))
    with pytest.raises(ConfigError, match="colour"):
        parse_config(write(tmp_path, {**TINY, "colour": 1}))


@pytest.mark.parametrize("doc,field", [
    ('{"settings": [', "malformed"),
    ('{"settings": [], "settings": []}', "duplicate"),
    ('{"settings": [{"id": "x", "instance": {"rho_corr": NaN}}]}', "non-finite"),
])
def test_malformed_documents(tmp_path, doc, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(write(tmp_path, doc))


@pytest.mark.parametrize("patch,field", [
    ({"instances": 0}, "instances"),
    ({"methods": ["baseline", "mt-q"]}, "methods"),
    ({"model": {"id_layer": 3}}, "id_layer"),
    ({"model": {"shared_layers": [5]}}, "shared layers"),
    ({"mlca": {"q_round": 5}}, "q_round"),
    ({"settings": [{"id": "x", "instance": {"n_local": 0, "n_regional": 0, "n_national": 0}}]},
     "settings.0.instance"),
    ({"settings": [TINY["settings"][0], TINY["settings"][0]]}, "duplicate setting id"),
])
def test_constraint_violations(tmp_path, patch, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(write(tmp_path, {**TINY, **patch}))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.json")


def test_config_dict_round_trip(tmp_path):
    cfg = parse_config(write(tmp_path, {**TINY, "model": {"shared_layers": [1, 2], "epochs": 3}}))
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert cfg.train_config("mt-r").shared_layers() == (1, 2)


# ---------------------------------------------------------------------------
# running


def test_run_cardinality_and_determinism(tmp_path):
    cfg = parse_config(write(tmp_path, TINY))
    first = run_experiment(cfg, tmp_path / "one")
    second = run_experiment(cfg, tmp_path / "two", jobs=2)
    rows = read_csv(first["results"])
    assert tuple(rows[0]) == RESULTS_HEADER
    assert len(rows) - 1 == 2 * 3 * 3
    assert [r[:3] for r in rows[1:4]] == [["a", "100", "baseline"], ["a", "100", "mt-f"], ["a", "100", "mt-r"]]
    for r in rows[1:]:
        assert 0.0 <= float(r[3]) <= 1.0
        assert float(r[4]) >= 0.0
        assert r[5] == ""
    mape_rows = read_csv(first["mape"])
    assert tuple(mape_rows[0]) == MAPE_HEADER
    assert len(mape_rows) - 1 == 18 * 2
    for key in ("results", "mape", "trace"):
        assert first[key].read_bytes() == second[key].read_bytes()
    trace = [json.loads(line) for line in first["trace"].read_text().splitlines()]
    assert len(trace) == 18 and len(trace[0]["rounds"]) == 2


def test_runtime_column_on_request(tmp_path):
    cfg = config_from_dict({**TINY, "settings": TINY["settings"][:1], "instances": 1,
                            "methods": ["baseline"]})
    paths = run_experiment(cfg, tmp_path, record_runtime=True)
    assert float(read_csv(paths["results"])[1][5]) > 0


def test_failed_run_names_the_task(tmp_path):
    cfg = config_from_dict({**TINY, "settings": TINY["settings"][:1], "instances": 1,
                            "methods": ["baseline"], "model": {"lr": 1e200, "epochs": 5}})
    with pytest.raises(RuntimeError, match="setting='a' seed=100 method='baseline'"):
        run_experiment(cfg, tmp_path)


def test_smoke_config_under_a_minute(tmp_path):
    start = time.perf_counter()
    run_experiment(parse_config(CONFIGS / "smoke.json"), tmp_path)
    assert time.perf_counter() - start < 60


# ---------------------------------------------------------------------------
# summary


def results_file(tmp_path, rows):
    path = tmp_path / "results.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        w.writerows(rows)
    return tmp_path


def test_summary_constant_and_identical(tmp_path):
    rows = [("s", seed, m, 0.75, 1.0, "") for seed in range(4) for m in ("baseline", "mt-f")]
    summary = summarize(results_file(tmp_path, rows))
    assert [s.std for s in summary] == [0.0, 0.0]
    assert summary[1].p_value == 1.0 and summary[0].p_value is None
    assert all(s.best for s in summary)


def test_summary_p_value_matches_enumeration(rng, tmp_path):
    base = rng.uniform(0.6, 0.9, size=10)
    mt = base + rng.normal(0.01, 0.02, size=10)
    rows = [("s", k, "baseline", b, 0.0, "") for k, b in enumerate(base)]
    rows += [("s", k, "mt-r", v, 0.0, "") for k, v in enumerate(mt)]
    summary = summarize(results_file(tmp_path, rows))
    _, p_ref = enumerate_wilcoxon(list(zip(mt, base)))
    assert summary[1].method == "mt-r"
    assert summary[1].p_value == p_ref
    assert summary[1].mean == pytest.approx(mt.mean())
    assert summary[1].std == pytest.approx(mt.std())
    assert summary[0].best != summary[1].best


def test_summary_requires_baseline():
    with pytest.raises(ValueError, match="baseline"):
        summarize_rows([{"setting": "s", "seed": 0, "method": "mt-f", "efficiency": 0.5, "revenue": 0.0}])


def test_summary_outputs(tmp_path):
    rows = [("s", seed, m, 0.5 + 0.01 * seed, 1.0, "") for seed in range(3) for m in ("baseline", "mt-f")]
    results_file(tmp_path, rows)
    summarize(tmp_path, tmp_path / "report" / "summary.txt")
    text = (tmp_path / "report" / "summary.txt").read_text()
    assert "±" in text and "baseline" in text
    table = read_csv(tmp_path / "report" / "summary.csv")
    assert table[0] == ["setting", "method", "n", "mean_efficiency", "std_efficiency", "p_vs_baseline", "best"]
    assert (tmp_path / "report" / "summary_efficiency.png").stat().st_size > 0


# ---------------------------------------------------------------------------
# command line


def test_cli_round_trip(tmp_path, capsys):
    cfg = write(tmp_path, {**TINY, "settings": TINY["settings"][:1], "instances": 2})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert main(["table", "--in", str(tmp_path / "run"), "--out", str(tmp_path / "t.txt")]) == 0
    out = capsys.readouterr().out
    assert "mt-r" in out
    assert (tmp_path / "t.csv").exists() and (tmp_path / "t_mape.png").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, {**TINY, "mlca": {"qq_max": 1}})
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "qq_max" in capsys.readouterr().err
    assert main(["table", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "x.txt")]) == 1
    assert "results file not found" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run"])


def test_schema_defaults_match_parser():
    from importlib import resources

    from mtmlca.valuemodel import InstanceConfig

    schema = json.loads(resources.files("mtmlca").joinpath("config.schema.json").read_text())
    cfg = config_from_dict({"settings": TINY["settings"][:1]})
    props = schema["properties"]
    mlca = props["mlca"]["properties"]
    assert [mlca[k]["default"] for k in ("q_init", "q_round", "q_max")] == \
        [cfg.mlca.q_init, cfg.mlca.q_round, cfg.mlca.q_max]
    model = props["model"]["properties"]
    tc = cfg.train_config("mt-f")
    for key in ("t", "lr", "epochs", "lam", "inject_id", "id_dim", "id_layer"):
        assert model[key]["default"] == getattr(tc, key), key
    assert tuple(model["hidden"]["default"]) == tc.hidden
    assert props["eval"]["properties"]["n_test"]["default"] == cfg.n_test
    assert props["eval"]["properties"]["seed"]["default"] == cfg.eval_seed
    assert tuple(props["methods"]["default"]) == cfg.methods
    assert props["instances"]["default"] == cfg.instances
    assert props["base_seed"]["default"] == cfg.base_seed
    inst = InstanceConfig()
    for key, node in schema["$defs"]["instance"]["properties"].items():
        value = getattr(inst, key)
        assert node["default"] == (list(value) if isinstance(value, tuple) else value), key
