import json
import struct

import numpy as np
import pytest

from ordforecast.errors import ConfigError, DataError
from ordforecast.forecaster import forecast
from ordforecast.harness.checkpoint import (
    CheckpointError,
    file_sha256,
    load_checkpoint,
    save_checkpoint,
)
from ordforecast.harness.cli import main
from ordforecast.harness.data import (
    DatasetManifest,
    load_series,
    make_windows,
    split_windows,
    window_count,
)
from ordforecast.harness.experiments import ExperimentConfig, derive_seed
from ordforecast.quantizer import OrdinalQuantizer
from ordforecast.seq2seq import TrainingConfig, init_model


class TestLoadSeries:
    def test_plain_values(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1.0\n2.0\n3.0")
        s = load_series(p)
        np.testing.assert_array_equal(s.values, [1.0, 2.0, 3.0])
        assert s.name == "s"

    def test_header_and_extra_columns(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("value,other\n1.5,a\n-2,b\n")
        np.testing.assert_array_equal(load_series(p).values, [1.5, -2.0])

    def test_nan_names_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("value\n1.0\nNaN\n3.0\n")
        with pytest.raises(DataError, match="row 3"):
            load_series(p)

    def test_unparseable_names_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1.0\n2.0\nabc\n")
        with pytest.raises(DataError, match="row 3"):
            load_series(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("value\n")
        with pytest.raises(DataError):
            load_series(p)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_series(tmp_path / "nope.csv")


class TestWindows:
    def test_count(self):
        assert window_count(10, 4, 2) == 5
        assert len(make_windows(np.arange(10.0), 4, 2)) == 5

    def test_stride_equal_to_length(self):
        assert len(make_windows(np.arange(10.0), 4, 2, stride=10)) == 1

    def test_encoder_only(self):
        (ctx, tgt), = make_windows(np.arange(21.0), 21, 0)
        assert ctx.size == 21 and tgt.size == 0

    def test_contents_chronological(self):
        w = make_windows(np.arange(8.0), 3, 2, stride=2)
        np.testing.assert_array_equal(w[1][0], [2, 3, 4])
        np.testing.assert_array_equal(w[1][1], [5, 6])

    def test_too_short(self):
        with pytest.raises(DataError):
            make_windows(np.arange(5.0), 4, 2)

    def test_split_keeps_one_for_validation(self):
        tr, va = split_windows(list(range(3)), 0.1)
        assert tr == [0, 1] and va == [2]

    def test_split_fraction(self):
        tr, va = split_windows(list(range(10)), 0.2)
        assert tr == list(range(8)) and va == [8, 9]


@pytest.fixture
def small_model():
    q = OrdinalQuantizer(9, -1.0, 2.0)
    return init_model(9, TrainingConfig(n_h=5, dropout_rate=0.3), quantizer=q, seed=2)


class TestCheckpoint:
    def test_round_trip_gives_identical_forecast(self, tmp_path, small_model):
        p = save_checkpoint(small_model, tmp_path / "m.ckpt")
        loaded = load_checkpoint(p)
        assert loaded.checksum() == small_model.checksum()
        assert loaded.quantizer == small_model.quantizer
        assert loaded.config == small_model.config
        a = forecast(small_model, [1, 2, 3], 4, n_samples=10, seed=5)
        b = forecast(loaded, [1, 2, 3], 4, n_samples=10, seed=5)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_save_is_deterministic(self, tmp_path, small_model):
        a = save_checkpoint(small_model, tmp_path / "a.ckpt")
        b = save_checkpoint(small_model, tmp_path / "b.ckpt")
        assert a.read_bytes() == b.read_bytes()

    def test_truncated(self, tmp_path, small_model):
        p = save_checkpoint(small_model, tmp_path / "m.ckpt")
        p.write_bytes(p.read_bytes()[:-100])
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(p)

    def test_corrupted_payload(self, tmp_path, small_model):
        p = save_checkpoint(small_model, tmp_path / "m.ckpt")
        raw = bytearray(p.read_bytes())
        raw[-60] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_version_bump(self, tmp_path, small_model):
        p = save_checkpoint(small_model, tmp_path / "m.ckpt", version=2)
        with pytest.raises(CheckpointError, match="version 2"):
            load_checkpoint(p)

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b"hello" * 20)
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_header_layout(self, tmp_path, small_model):
        raw = save_checkpoint(small_model, tmp_path / "m.ckpt").read_bytes()
        magic, version, hlen = struct.unpack_from("<8sIQ", raw)
        assert magic == b"ORDFCKPT" and version == 1
        header = json.loads(raw[20:20 + hlen])
        n = sum(int(np.prod(e["shape"])) for e in header["manifest"])
        assert len(raw) == 20 + hlen + 8 * n + 32


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "a", "gum") == derive_seed(0, "a", "gum")
    assert derive_seed(0, "a", "gum") != derive_seed(0, "b", "gum")
    assert derive_seed(0, "a") != derive_seed(1, "a")


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"horizonn": 3})

    def test_bad_training_section(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"training": {"dropout_rate": 2.0}})

    def test_dotted_override(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"training": {"max_epochs": 3}}))
        cfg = ExperimentConfig.from_file(p, {"training.max_epochs": 7, "horizon": 4})
        assert cfg.training["max_epochs"] == 7 and cfg.horizon == 4


# --------------------------------------------------------------------------
# end-to-end runs on a tiny corpus
# --------------------------------------------------------------------------

TINY = {
    "stride": 4,
    "n_samples": 8,
    "training": {"encoder_len": 8, "decoder_len": 4, "max_epochs": 2, "batch_size": 16},
    "grid": {"n_h": [4], "dropout_rate": [0.25], "l2_lambda": [1e-6]},
    "gp_restarts": 2,
    "gp_max_iter": 20,
    "k_min": 2,
    "k_max": 4,
    "embed_windows_per_series": 5,
}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(root), "--n-aux", "2", "--n-eval", "3",
                 "--aux-length", "120", "--eval-length", "36", "--m", "10"]) == 0
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["train-gum", "--manifest", str(root / "manifest.json"), "--config", str(cfg),
                 "--output", str(root / "gum")]) == 0
    return root


def _run(corpus_dir, sub, out, *extra):
    args = [sub, "--manifest", str(corpus_dir / "manifest.json"), "--config",
            str(corpus_dir / "config.json"), "--output", str(out), *extra]
    return main(args)


def _tree(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestEndToEnd:
    def test_zero_shot_reproducible_and_checkpoint_untouched(self, corpus_dir, tmp_path):
        ckpt = next((corpus_dir / "gum").glob("*.ckpt"))
        h = file_sha256(ckpt)
        for name in ("a", "b"):
            assert _run(corpus_dir, "zero-shot", tmp_path / name, "--checkpoint", str(ckpt)) == 0
        assert file_sha256(ckpt) == h
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a == b
        assert {"metrics.csv", "rank_table.txt", "resolved_config.json"} <= set(a)
        models = {line.split(",")[1] for line in a["metrics.csv"].decode().splitlines()[1:]}
        assert models == {"GUM", "AR3", "AR4", "GP-M52", "GP-RQ"}

    def test_short_series_skipped(self, corpus_dir, tmp_path):
        ckpt = next((corpus_dir / "gum").glob("*.ckpt"))
        assert _run(corpus_dir, "zero-shot", tmp_path, "--checkpoint", str(ckpt),
                    "--set", "min_length=40") == 0
        skipped = (tmp_path / "skipped.csv").read_text().splitlines()
        assert len(skipped) == 4 and "36 < 40" in skipped[1]

    def test_few_shot_reproducible(self, corpus_dir, tmp_path):
        ckpt = next((corpus_dir / "gum").glob("*.ckpt"))
        extra = ["--set", "context_len=8", "--set", "horizon=4", "--set", "min_length=36",
                 "--set", "checkpoints=" + json.dumps({"nh4_drop0.25_l21e-06": str(ckpt)})]
        for name in ("a", "b"):
            assert _run(corpus_dir, "few-shot", tmp_path / name, *extra) == 0
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a == b
        assert "MOrdReD" in a["rank_table.txt"].decode()

    def test_embed(self, corpus_dir, tmp_path):
        ckpt = next((corpus_dir / "gum").glob("*.ckpt"))
        assert _run(corpus_dir, "embed", tmp_path, "--checkpoint", str(ckpt)) == 0
        rows = (tmp_path / "clusters.csv").read_text().splitlines()
        assert len(rows) == 1 + 2 * 5 + 3
        assert rows[0] == "id,group,cluster,x,y,last_bin,cluster_mean_last_bin"

    def test_report_regenerates_rank_table(self, corpus_dir, tmp_path):
        ckpt = next((corpus_dir / "gum").glob("*.ckpt"))
        _run(corpus_dir, "zero-shot", tmp_path, "--checkpoint", str(ckpt))
        assert main(["report", "--metrics", str(tmp_path / "metrics.csv"),
                     "--out", str(tmp_path / "again.txt")]) == 0
        assert (tmp_path / "again.txt").read_text() == (tmp_path / "rank_table.txt").read_text()


class TestExitCodes:
    def test_config_error(self, corpus_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["zero-shot", "--manifest", str(corpus_dir / "manifest.json"),
                     "--config", str(bad)]) == 1

    def test_unknown_override_key(self, corpus_dir, tmp_path):
        assert _run(corpus_dir, "zero-shot", tmp_path, "--set", "nonsense=1") == 1

    def test_data_error(self, tmp_path):
        m = tmp_path / "manifest.json"
        m.write_text(json.dumps({"m": 10, "series": [{"id": "x", "path": "gone.csv", "role": "evaluation"}]}))
        assert main(["zero-shot", "--manifest", str(m), "--checkpoint", "whatever"]) == 2

    def test_corrupt_checkpoint_is_data_error(self, corpus_dir, tmp_path):
        p = tmp_path / "broken.ckpt"
        p.write_bytes(b"ORDFCKPT" + b"\0" * 64)
        assert _run(corpus_dir, "zero-shot", tmp_path / "o", "--checkpoint", str(p)) == 2

    def test_numerical_failure(self, corpus_dir, tmp_path):
        m = init_model(10, TrainingConfig(n_h=4), seed=0)
        m.out_W[...] = np.nan
        p = save_checkpoint(m, tmp_path / "nan.ckpt")
        assert _run(corpus_dir, "zero-shot", tmp_path / "o", "--checkpoint", str(p)) == 3

    def test_manifest_roundtrip(self, corpus_dir):
        man = DatasetManifest.from_file(corpus_dir / "manifest.json")
        assert len(man.by_role("auxiliary")) == 2 and len(man.by_role("evaluation")) == 3
        assert man.m == 10
