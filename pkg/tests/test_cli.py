import json
from pathlib import Path

import pytest

from mmrel import cli
from mmrel.config import DEFAULT_PATHS, config_from_dict, config_to_dict, load_config
from mmrel.errors import ConfigError

DATA = Path(__file__).parent / "data"
CHAIN = ["gen-synthetic", "pseudo-label", "train-cs", "train", "eval", "report"]
SMALL = ["--n-docs", "40", "--n-eval-docs", "10"]


def run(cmd, work, *extra):
    args = [cmd, "--work-dir", str(work), *extra]
    if cmd == "gen-synthetic":
        args += SMALL
    return cli.main(args)


@pytest.fixture(scope="module")
def chain_dir(tmp_path_factory):
    work = tmp_path_factory.mktemp("chain")
    for cmd in CHAIN:
        assert run(cmd, work) == 0, cmd
    return work


def test_chain_produces_artifacts(chain_dir):
    for key in ("corpus", "gold", "eval_corpus", "eval_gold", "ie_corpus", "frames", "encoder", "kb",
                "pseudo_labels", "cs_checkpoint", "model", "train_log", "predictions", "metrics",
                "report"):
        assert (chain_dir / DEFAULT_PATHS[key]).is_file(), key
    report = (chain_dir / "report.txt").read_text()
    assert "MERP" in report and "MM Base." in report


def test_rerun_is_byte_identical(chain_dir, tmp_path):
    for cmd in CHAIN:
        assert run(cmd, tmp_path) == 0
    for name in DEFAULT_PATHS.values():
        assert (tmp_path / name).read_bytes() == (chain_dir / name).read_bytes(), name


def test_iete2ve_mode(chain_dir, tmp_path, capsys):
    cfg = {"paths": {k: str(chain_dir / v) for k, v in DEFAULT_PATHS.items()}}
    cfg["paths"]["metrics"] = str(tmp_path / "m.csv")
    cfg["paths"]["predictions"] = str(tmp_path / "p.jsonl")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["eval", "--config", str(tmp_path / "c.json"), "--mode", "iete2ve"]) == 0
    assert "MERP" in capsys.readouterr().out


def test_missing_input_exit_2(tmp_path, capsys):
    assert run("pseudo-label", tmp_path) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("mmrel: error:")


def test_bad_data_exit_3_names_doc(chain_dir, tmp_path, capsys):
    lines = (chain_dir / "corpus.jsonl").read_text().splitlines()
    rec = json.loads(lines[3])
    rec["video_events"][1]["start_s"] = rec["video_events"][0]["start_s"]
    lines[3] = json.dumps(rec)
    (tmp_path / "corpus.jsonl").write_text("\n".join(lines) + "\n")
    for name in ("encoder.json", "frames.bin", "kb.tsv"):
        (tmp_path / name).write_bytes((chain_dir / name).read_bytes())
    assert run("pseudo-label", tmp_path) == 3
    assert f"[doc {rec['doc_id']}]" in capsys.readouterr().err


def test_eval_mismatched_universe_exit_3(chain_dir, tmp_path):
    cfg = {"paths": {k: str(chain_dir / v) for k, v in DEFAULT_PATHS.items()}}
    gold = (chain_dir / "eval_gold.jsonl").read_text().splitlines()
    rec = json.loads(gold[0])
    rec["video_event_id"] = "v999"
    (tmp_path / "g.jsonl").write_text(json.dumps(rec) + "\n")
    cfg["paths"]["eval_gold"] = str(tmp_path / "g.jsonl")
    cfg["paths"]["metrics"] = str(tmp_path / "m.csv")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["eval", "--config", str(tmp_path / "c.json")]) == 3


@pytest.mark.parametrize("text", ["{not json", json.dumps({"bogus": 1}),
                                  json.dumps({"synthetic": {"hier_density": 2.0}}),
                                  json.dumps({"merp": {"ct_heads": 5}}),
                                  json.dumps({"mode": "video-only"})])
def test_config_errors_exit_4(tmp_path, text):
    (tmp_path / "c.json").write_text(text)
    assert cli.main(["gen-synthetic", "--config", str(tmp_path / "c.json")]) == 4


def test_bad_flag_exit_4(tmp_path):
    assert cli.main(["eval", "--work-dir", str(tmp_path), "--mode", "nope"]) == 4


def test_report_matches_golden(tmp_path, capsys):
    (tmp_path / "metrics.csv").write_bytes((DATA / "report_fixture.csv").read_bytes())
    assert run("report", tmp_path) == 0
    golden = (DATA / "report_golden.txt").read_text()
    assert (tmp_path / "report.txt").read_text() == golden
    assert capsys.readouterr().out == golden


def test_flags_win_over_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "lambda": 25.0, "workers": 2,
                                                 "merp": {"prune_threshold": 20.0}}))
    args = cli.build_parser().parse_args(["train", "--config", str(tmp_path / "c.json"), "--seed", "9",
                                          "--lambda", "31", "--prune-threshold", "27",
                                          "--no-cs", "--epochs", "3"])
    cfg = cli.resolve_config(args)
    assert (cfg.seed, cfg.lam, cfg.workers, cfg.merp.prune_threshold) == (9, 31.0, 2, 27.0)
    assert cfg.synthetic.seed == 9 and not cfg.merp.use_cs and cfg.merp.epochs == 3
    assert cfg.path("corpus") == tmp_path / "corpus.jsonl"


def test_config_round_trip_and_relative_paths(tmp_path):
    cfg = config_from_dict({"paths": {"corpus": "sub/c.jsonl"}, "encoder": {"dim": 16},
                            "merp": {"dim": 16, "ct_heads": 4}}, tmp_path)
    again = config_from_dict(config_to_dict(cfg), tmp_path)
    assert again == cfg
    assert cfg.path("corpus") == tmp_path / "sub" / "c.jsonl"
    (tmp_path / "c.json").write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(tmp_path / "c.json") == cfg
    with pytest.raises(ConfigError):
        config_from_dict({"encoder": {"dim": 16}})  # merp dim still 32
