import json

import pytest

from fxstack import cli, config
from fxstack.errors import SpecError


def test_defaults_are_valid():
    cfg = config.PipelineConfig()
    assert config.validate_config(cfg) == []


def test_parse_text_config():
    cfg = config.parse_config_text("""
        # comment line
        data.source = synthetic
        data.n = 2500
        seed = 11
        recap.k = 20,30
        split.main = 0.6,0.2,0.2
        paper_mode = true
        models.rnn.lr = 0.001
    """)
    assert cfg.synthetic_n == 2500
    assert cfg.seed == 11
    assert cfg.recap_ks == (20, 30)
    assert cfg.main_split == (0.6, 0.2, 0.2)
    assert cfg.paper_mode is True
    assert cfg.rnn_lr == 0.001


def test_parse_json_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "data.source": "synthetic",
        "data.n": 1800,
        "recap.k": [20],
        "leakage_guard": False,
    }))
    cfg = config.load_config(str(path))
    assert cfg.synthetic_n == 1800
    assert cfg.recap_ks == (20,)
    assert cfg.leakage_guard is False


def test_unknown_key_rejected():
    with pytest.raises(SpecError, match="unknown config key"):
        config.parse_config_text("data.frequency = 15m")


def test_bad_values_rejected():
    with pytest.raises(SpecError):
        config.parse_config_text("data.n = many")
    with pytest.raises(SpecError):
        config.parse_config_text("paper_mode = maybe")
    with pytest.raises(SpecError):
        config.parse_config_text("just a line without equals")


def test_mapping_roundtrip():
    cfg = config.PipelineConfig(seed=99, recap_ks=(20, 30))
    echoed = config.config_from_mapping(config.config_to_mapping(cfg))
    assert echoed == cfg


def test_validate_flags_bad_bounds():
    cfg = config.PipelineConfig(lookback=0, horizon=0)
    messages = [f.message for f in config.validate_config(cfg)
                if f.severity == "error"]
    assert any("lookback" in m for m in messages)
    assert any("horizon" in m for m in messages)


def test_validate_csv_requires_path():
    cfg = config.PipelineConfig(source="csv")
    assert any(f.severity == "error"
               for f in config.validate_config(cfg))


def test_paper_mode_is_warning_not_error():
    cfg = config.PipelineConfig(paper_mode=True)
    findings = config.validate_config(cfg)
    assert findings
    assert all(f.severity == "warning" for f in findings)


def test_cli_validate_ok(tmp_path, capsys):
    path = tmp_path / "ok.cfg"
    path.write_text("data.source = synthetic\ndata.n = 2000\n")
    assert cli.main(["--config", str(path), "validate"]) == 0
    assert "config ok" in capsys.readouterr().out


def test_cli_validate_bad_config_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("lookback = 0\n")
    assert cli.main(["--config", str(path), "validate"]) == cli.EXIT_CONFIG


def test_cli_unknown_key_exit_2(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("data.nope = 1\n")
    assert cli.main(["--config", str(path), "validate"]) == cli.EXIT_CONFIG


def test_cli_missing_config_exit_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "absent.cfg"),
                     "run"]) == cli.EXIT_CONFIG


def test_cli_bad_csv_exit_3(tmp_path):
    csv_path = tmp_path / "bars.csv"
    csv_path.write_text("datetime,open\n")
    cfg = tmp_path / "cfg.cfg"
    cfg.write_text(f"data.source = csv\ndata.csv_path = {csv_path}\n")
    assert cli.main(["--config", str(cfg), "ingest"]) == cli.EXIT_DATA


def test_cli_ingest_synthetic(tmp_path, capsys):
    cfg = tmp_path / "cfg.cfg"
    cfg.write_text("data.source = synthetic\ndata.n = 500\n")
    assert cli.main(["--config", str(cfg), "ingest"]) == 0
    assert "bars: 500" in capsys.readouterr().out


def test_cli_seed_and_out_overrides(tmp_path):
    cfg = tmp_path / "cfg.cfg"
    cfg.write_text("seed = 1\n")
    args = cli.build_parser().parse_args(
        ["--config", str(cfg), "--seed", "77", "--out", "elsewhere",
         "--paper-mode", "validate"])
    built = cli._build_config(args)
    assert built.seed == 77
    assert built.out_dir == "elsewhere"
    assert built.paper_mode is True
