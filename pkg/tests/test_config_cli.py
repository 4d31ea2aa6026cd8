"""Config file round-trips and the command-line pipeline on a tiny corpus."""

import numpy as np
import pytest

from sigver import config
from sigver.cli import main
from sigver.config import ConfigFileError, RunConfig, dumps, loads

# ---------------------------------------------------------------------------
# config file format
# ---------------------------------------------------------------------------


def test_defaults_round_trip_byte_stable():
    text = dumps(RunConfig())
    assert dumps(loads(text)) == text


def test_round_trip_preserves_every_field():
    cfg = loads(
        "seed = 7\nloss = triplet\nepochs = 12\npatience = 3\n"
        "steps_per_epoch = 4\ntrain_dtype = float64\n"
        "train_frac = 0.6\nval_frac = 0.2\ntest_frac = 0.2\n"
        "input_h = 32\ninput_w = 56\nstage_channels = 2,4,4,8\n"
        "branch_channels = 8\nattention_dim = 2\nembedding_dim = 16\n"
        "region_w = 3\nregion_w_overlap = 1\nregion_h = 2\nregion_h_overlap = 1\n"
        "fusion = concat\nk = 2\nw = 3\ndelta = 0.25\nlambda = 0.5\n"
        "triplet_margin = 0.9\nlr = 0.002\nlr_decay = 0.4\nlr_decay_every = 5\n"
        "identities = 8\ngenuine_per_identity = 5\nforged_per_identity = 4\n"
        "raw_h = 48\nraw_w = 72\njitter = 1.0\ndistortion = 3.0\n")
    assert cfg.seed == 7
    assert cfg.loss == "triplet"
    assert cfg.net.fusion == "concat"
    assert cfg.net.stage_channels == (2, 4, 4, 8)
    assert cfg.tuplets.regional_weight == 0.5
    assert cfg.adam.decay_every == 5
    assert cfg.synth.raw_w == 72
    again = loads(dumps(cfg))
    assert dumps(again) == dumps(cfg)


def test_partial_file_keeps_defaults():
    cfg = loads("seed = 5\nk = 4\n")
    assert cfg.seed == 5
    assert cfg.tuplets.k == 4
    assert cfg.tuplets.w == 6            # run-level default, not LossConfig's
    assert cfg.net.input_h == 64         # desk profile


def test_comments_and_blank_lines_ignored():
    cfg = loads("# full line comment\n\nseed = 9   # trailing comment\n")
    assert cfg.seed == 9


def test_unknown_and_duplicate_keys_rejected():
    with pytest.raises(ConfigFileError, match="unknown config keys: bogus"):
        loads("bogus = 1\n")
    with pytest.raises(ConfigFileError, match="duplicate key"):
        loads("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigFileError, match="key = value"):
        loads("just some words\n")
    with pytest.raises(ConfigFileError, match="bad value"):
        loads("seed = notanumber\n")


def test_validation_errors():
    with pytest.raises(ConfigFileError, match=r"epochs must lie in \[1, 80\]"):
        loads("epochs = 81\n")
    with pytest.raises(ConfigFileError, match="epochs"):
        loads("epochs = 0\n")
    with pytest.raises(ConfigFileError, match="loss"):
        loads("loss = hinge\n")
    with pytest.raises(ConfigFileError, match="sum to 1"):
        loads("train_frac = 0.5\n")
    with pytest.raises(ConfigFileError, match="genuine_per_identity"):
        loads("k = 10\nw = 2\n")
    with pytest.raises(ConfigFileError, match="forged_per_identity"):
        loads("k = 8\ngenuine_per_identity = 12\nforged_per_identity = 7\n")
    with pytest.raises(ConfigFileError, match="train_dtype"):
        loads("train_dtype = float16\n")
    # section-level validation surfaces as a config error too
    with pytest.raises(ConfigFileError):
        loads("region_w = 40\n")


def test_lambda_key_maps_to_regional_weight():
    assert loads("lambda = 0.25\n").tuplets.regional_weight == 0.25
    assert "lambda = 1.0" in dumps(RunConfig())
    assert "regional_weight" not in dumps(RunConfig())


def test_load_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.txt"):
        config.load_config(tmp_path / "nope.txt")


def test_save_then_load_config(tmp_path):
    path = tmp_path / "run.txt"
    cfg = loads("seed = 11\nepochs = 2\n")
    config.save_config(path, cfg)
    assert dumps(config.load_config(path)) == dumps(cfg)


# ---------------------------------------------------------------------------
# CLI pipeline on a tiny corpus
# ---------------------------------------------------------------------------

TINY_CONFIG = """\
seed = 3
epochs = 2
patience = 5
steps_per_epoch = 2
data_dir = {data}
out_dir = {out}

input_h = 32
input_w = 56
stage_channels = 2,4,4,8
branch_channels = 8
attention_dim = 2
embedding_dim = 16
region_w = 3
region_w_overlap = 1
region_h = 2
region_h_overlap = 1

k = 2
w = 3

identities = 8
genuine_per_identity = 4
forged_per_identity = 3
raw_h = 48
raw_w = 72
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> preprocess -> train -> eval once; commands share state."""
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "run"
    cfg_path = root / "cfg.txt"
    cfg_path.write_text(TINY_CONFIG.format(data=data, out=out))
    for verb in ("synth", "preprocess", "train", "eval"):
        assert main([verb, "--config", str(cfg_path)]) == 0
    return root, cfg_path, data, out


def test_cli_synth_outputs(pipeline):
    root, cfg_path, data, out = pipeline
    assert (data / "manifest.csv").exists()
    assert len(list(data.glob("*.pgm"))) == 8 * (4 + 3)


def test_cli_preprocess_cache_row_count(pipeline):
    root, cfg_path, data, out = pipeline
    from sigver.imageprep import load_cache, read_manifest
    rows = read_manifest(data / "manifest.csv")
    cache = load_cache(data / "cache.bin", rows)
    assert len(cache) == len(rows) == 56


def test_cli_train_outputs(pipeline):
    root, cfg_path, data, out = pipeline
    for name in ("train_manifest.csv", "val_manifest.csv", "test_manifest.csv",
                 "training_log.csv", "training_curves.png", "checkpoint.bin",
                 "run_config.txt"):
        assert (out / name).exists(), name
    log = (out / "training_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_eer"
    assert log[1].startswith("0,,")         # untrained row has empty loss
    assert len(log) == 4                    # header + epoch 0 + 2 epochs
    # PNG is a real image, not a placeholder
    assert (out / "training_curves.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_eval_outputs(pipeline):
    root, cfg_path, data, out = pipeline
    report = (out / "report.csv").read_text().splitlines()
    assert report[0] == "metric,value"
    metrics = {line.split(",")[0] for line in report[1:]}
    assert {"threshold", "frr", "far", "eer", "auc"} <= metrics
    roc = (out / "roc.csv").read_text().splitlines()
    assert roc[0] == "threshold,far,frr,tpr"
    assert len(roc) > 2
    assert (out / "roc.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_eval_embedding_export(pipeline):
    root, cfg_path, data, out = pipeline
    lines = (out / "embeddings.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["image_id", "branch"]
    assert header[2:] == [f"dim_{i}" for i in range(16)]
    # 7 rows (global + 6 regions) per test image
    from sigver.imageprep import read_manifest
    n_test = len(read_manifest(out / "test_manifest.csv"))
    assert len(lines) - 1 == 7 * n_test
    branches = {line.split(",")[1] for line in lines[1:]}
    assert branches == {"global", "region1", "region2", "region3",
                        "region4", "region5", "region6"}


def test_cli_rerun_byte_identical(pipeline):
    """Repeating every command leaves byte-identical CSV and cache outputs."""
    root, cfg_path, data, out = pipeline
    watched = [data / "manifest.csv", data / "cache.bin",
               out / "training_log.csv", out / "test_manifest.csv",
               out / "report.csv", out / "roc.csv", out / "embeddings.csv"]
    before = {p: p.read_bytes() for p in watched}
    for verb in ("synth", "preprocess", "train", "eval"):
        assert main([verb, "--config", str(cfg_path)]) == 0
    for p in watched:
        assert p.read_bytes() == before[p], f"{p.name} changed on rerun"


def test_cli_seed_flag_changes_results(pipeline, tmp_path):
    root, cfg_path, data, out = pipeline
    alt = tmp_path / "alt"
    assert main(["train", "--config", str(cfg_path), "--seed", "4",
                 "--out", str(alt)]) == 0
    assert (alt / "training_log.csv").read_text() != \
        (out / "training_log.csv").read_text()


def test_cli_missing_manifest_names_path(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"data_dir = {tmp_path / 'nowhere'}\n")
    assert main(["preprocess", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "manifest.csv" in err and "nowhere" in err


def test_cli_missing_checkpoint_errors(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"data_dir = {tmp_path}\nout_dir = {tmp_path / 'empty'}\n")
    assert main(["eval", "--config", str(cfg)]) == 2


def test_cli_bad_config_reports_error(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs = 500\n")
    assert main(["synth", "--config", str(cfg)]) == 2
    assert "epochs" in capsys.readouterr().err


def test_cli_checkpoint_config_mismatch(pipeline, tmp_path, capsys):
    """Evaluating with a different architecture reports the mismatch."""
    root, cfg_path, data, out = pipeline
    text = cfg_path.read_text().replace("embedding_dim = 16",
                                        "embedding_dim = 24")
    bad = tmp_path / "bad.txt"
    bad.write_text(text)
    assert main(["eval", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "mismatch" in err or "shape" in err


def test_cli_gradcheck_negative_control(monkeypatch, capsys):
    """A corrupted analytic gradient makes gradcheck fail loudly."""
    import sigver.cli as cli_mod
    from sigver.ndgrad.gradcheck import grad_check as real_grad_check

    def tampered_grad_check(loss_fn, store, names=None, h=1e-5, tolerance=1e-4):
        result = real_grad_check(loss_fn, store, names=["embed.global.w"],
                                 h=h, tolerance=tolerance)
        result.per_param["embed.global.w"] += 1.0    # simulate a broken rule
        return result

    monkeypatch.setattr(cli_mod, "grad_check", tampered_grad_check)
    assert main(["gradcheck", "--seed", "3"]) == 1
    assert "worst offender" in capsys.readouterr().out
