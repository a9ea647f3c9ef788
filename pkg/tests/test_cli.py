import json
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pocscreen import models
from pocscreen.cli import main


@pytest.fixture
def capfdjson(capfd):
    """Run main(argv), return (exit_code, parsed stdout JSON, stderr)."""

    def run(argv):
        code = main(argv)
        out, err = capfd.readouterr()
        payload = json.loads(out.strip().splitlines()[-1]) if out.strip() else None
        return code, payload, err

    return run


def write_fixture_dataset(root: Path, n=24, seed=0) -> Path:
    """Tiny image dataset whose nail brightness tracks hemoglobin."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(exist_ok=True)
    lines = ["image_path,annotation_path,hb_gdl"]
    for i in range(n):
        hb = float(rng.uniform(7.0, 16.5))
        base = int(90 + (hb - 7.0) * 12)  # paler nail -> lower hb proxy
        pixels = rng.integers(base - 12, base + 12, size=(32, 32, 3)).astype(np.uint8)
        pixels[24:, 24:] = 250  # reference card corner
        Image.fromarray(pixels).save(root / "images" / f"img{i}.png")
        (root / "labels" / f"img{i}.txt").write_text(
            "0 0.3 0.3 0.4 0.4\n1 0.3 0.75 0.3 0.3\n2 0.875 0.875 0.2 0.2\n"
        )
        lines.append(f"images/img{i}.png,labels/img{i}.txt,{hb:.3f}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture
def dataset_dir(tmp_path):
    manifest = write_fixture_dataset(tmp_path / "data")
    return manifest


class TestUsageContract:
    def test_unknown_subcommand_exits_2(self, capfd):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self, capfd):
        with pytest.raises(SystemExit) as exc:
            main(["balance", "manifest.csv"])  # --mode missing
        assert exc.value.code == 2

    def test_pipeline_failure_exits_1_with_json_error(self, capfdjson):
        code, _, err = capfdjson(["dataset", "validate", "no-such-manifest.csv"])
        assert code == 1
        error_line = err.strip().splitlines()[-1]
        assert json.loads(error_line)["error"]


class TestDatasetValidate:
    def test_clean_dataset_passes(self, capfdjson, dataset_dir):
        code, payload, _ = capfdjson(["dataset", "validate", str(dataset_dir)])
        assert code == 0
        assert payload["rows"] == 24
        assert payload["issues"] == []

    def test_issues_reported_per_row(self, capfdjson, dataset_dir):
        bad = dataset_dir.parent / "bad_manifest.csv"
        text = dataset_dir.read_text().splitlines()
        text.append("images/missing.png,labels/img0.txt,11.0")
        text.append("images/img0.png,labels/img0.txt,99.0")
        bad.write_text("\n".join(text) + "\n")
        code, payload, _ = capfdjson(["dataset", "validate", str(bad)])
        assert code == 1
        problems = [i["problem"] for i in payload["issues"]]
        assert any("missing image" in p for p in problems)
        assert any("sanity bounds" in p for p in problems)


class TestBalanceCommand:
    def test_emits_report_and_manifest(self, capfdjson, dataset_dir, tmp_path):
        out_manifest = tmp_path / "balanced.csv"
        report = tmp_path / "balance.csv"
        code, payload, _ = capfdjson(
            [
                "balance",
                str(dataset_dir),
                "--mode",
                "remark",
                "--seed",
                "7",
                "--out-manifest",
                str(out_manifest),
                "--report",
                str(report),
            ]
        )
        assert code == 0
        assert payload["seed"] == 7
        counts = {c["class"]: c for c in payload["classes"]}
        assert counts["anemic"]["after"] == counts["non_anemic"]["after"]
        assert report.read_text().startswith("class,before,after,bandwidth,seed")
        balanced_rows = out_manifest.read_text().strip().splitlines()
        assert len(balanced_rows) - 1 == sum(c["after"] for c in payload["classes"])


class TestTrainPredict:
    def test_train_is_seed_deterministic(self, capfdjson, dataset_dir, tmp_path):
        m1, m2, m3 = (tmp_path / f"model{i}.bin" for i in range(3))
        for out in (m1, m2):
            code, _, _ = capfdjson(
                ["train", str(dataset_dir), "--model", "rf", "--seed", "5", "-o", str(out)]
            )
            assert code == 0
        code, _, _ = capfdjson(
            ["train", str(dataset_dir), "--model", "rf", "--seed", "6", "-o", str(m3)]
        )
        assert code == 0
        assert m1.read_bytes() == m2.read_bytes()
        assert m1.read_bytes() != m3.read_bytes()

    def test_train_config_file_overrides(self, capfdjson, dataset_dir, tmp_path):
        config = tmp_path / "train.cfg"
        config.write_text("n_trees = 3\nmax_depth = 2\n")
        out = tmp_path / "model.bin"
        code, _, _ = capfdjson(
            [
                "train", str(dataset_dir), "--model", "rf",
                "--config", str(config), "-o", str(out),
            ]
        )
        assert code == 0
        model = models.deserialize_model(out.read_bytes())
        assert model.config.n_trees == 3
        assert model.config.max_depth == 2

    def test_predict_emits_consistent_json(self, capfdjson, dataset_dir, tmp_path):
        out = tmp_path / "model.bin"
        capfdjson(["train", str(dataset_dir), "--model", "rf", "-o", str(out)])
        data_root = dataset_dir.parent
        code, payload, _ = capfdjson(
            [
                "predict",
                str(out),
                str(data_root / "images" / "img0.png"),
                str(data_root / "labels" / "img0.txt"),
            ]
        )
        assert code == 0
        hb = payload["predicted_hb_gdl"]
        assert np.isfinite(hb)
        from pocscreen.balance import remark_of, severity_of

        assert payload["remark"] == remark_of(hb).value
        assert payload["severity"] == severity_of(hb).value

    def test_linear_model_training(self, capfdjson, dataset_dir, tmp_path):
        out = tmp_path / "ridge.bin"
        code, payload, _ = capfdjson(
            ["train", str(dataset_dir), "--model", "ridge", "-o", str(out)]
        )
        assert code == 0
        model = models.deserialize_model(out.read_bytes())
        assert model.family == "ridge"


class TestEvaluateCommand:
    def test_report_files_written(self, capfdjson, dataset_dir, tmp_path):
        report = tmp_path / "report.csv"
        code, payload, err = capfdjson(
            [
                "evaluate", str(dataset_dir), "ridge", "mean",
                "--mode", "remark", "--seed", "3", "-o", str(report),
            ]
        )
        assert code == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "model,sensitivity,specificity,mae_gdl,rmse_gdl"
        assert len(lines) == 3
        rmses = [float(l.split(",")[-1]) for l in lines[1:]]
        assert rmses == sorted(rmses)
        assert Path(payload["cv_report"]).exists()
        points = Path(payload["points"]).read_text()
        assert points.startswith("model,y_true_gdl,y_pred_gdl")
        assert "loa_lower_gdl" in points
        assert "Model" in err  # human table on stderr


class TestBenchCommand:
    def test_crypto_bench_json(self, capfdjson):
        code, payload, _ = capfdjson(["bench", "--op", "crypto", "--runs", "5"])
        assert code == 0
        assert payload["op"] == "crypto"
        assert payload["n_runs"] == 5
        assert payload["p95_ms"] >= payload["p50_ms"] >= 0


class TestStoreAdmin:
    def test_init_user_flow(self, capfdjson, tmp_path, monkeypatch):
        store_dir = str(tmp_path / "store")
        monkeypatch.setenv("POCSCREEN_PASSPHRASE", "a strong store passphrase")
        monkeypatch.setenv("POCSCREEN_ADMIN_PASSWORD", "admin-password-1")
        code, payload, _ = capfdjson(["store", "init", "--store", store_dir])
        assert code == 0
        assert payload["admin"] == "admin"

        monkeypatch.setenv("POCSCREEN_USER_PASSWORD", "nurse-password-1")
        code, payload, _ = capfdjson(
            ["store", "user", "add", "--store", store_dir,
             "--username", "nurse1", "--roles", "screener"]
        )
        assert code == 0
        assert payload["roles"] == ["screener"]

        code, payload, _ = capfdjson(
            ["store", "user", "role", "--store", store_dir,
             "--username", "nurse1", "--roles", "clinician,screener"]
        )
        assert code == 0
        assert payload["roles"] == ["clinician", "screener"]

    def test_rotate_keys_flow(self, capfdjson, tmp_path, monkeypatch):
        store_dir = str(tmp_path / "store")
        monkeypatch.setenv("POCSCREEN_PASSPHRASE", "first passphrase 123")
        monkeypatch.setenv("POCSCREEN_ADMIN_PASSWORD", "admin-password-1")
        assert capfdjson(["store", "init", "--store", store_dir])[0] == 0

        monkeypatch.setenv("POCSCREEN_NEW_PASSPHRASE", "second passphrase 456")
        code, payload, _ = capfdjson(["store", "rotate-keys", "--store", store_dir])
        assert code == 0
        assert payload["system"] == 1  # users payload re-encrypted

        # old passphrase no longer opens records; new one does
        monkeypatch.setenv("POCSCREEN_PASSPHRASE", "second passphrase 456")
        monkeypatch.setenv("POCSCREEN_USER_PASSWORD", "nurse-password-1")
        code, _, _ = capfdjson(
            ["store", "user", "add", "--store", store_dir,
             "--username", "nurse1", "--roles", "screener"]
        )
        assert code == 0

    def test_missing_secret_fails_cleanly(self, capfdjson, tmp_path, monkeypatch):
        monkeypatch.delenv("POCSCREEN_PASSPHRASE", raising=False)
        monkeypatch.delenv("POCSCREEN_KEY_FILE", raising=False)
        code, _, err = capfdjson(["store", "init", "--store", str(tmp_path / "s")])
        assert code == 1
        assert "POCSCREEN_PASSPHRASE" in err


class TestExportCommand:
    def test_export_csv(self, capfdjson, tmp_path, monkeypatch):
        store_dir = str(tmp_path / "store")
        monkeypatch.setenv("POCSCREEN_PASSPHRASE", "a strong store passphrase")
        monkeypatch.setenv("POCSCREEN_ADMIN_PASSWORD", "admin-password-1")
        assert capfdjson(["store", "init", "--store", store_dir])[0] == 0

        from pocscreen.vault.records import Demographics, PatientRecord, ScreeningEntry
        from pocscreen.vault.store import RecordStore

        with RecordStore.open(store_dir, passphrase="a strong store passphrase") as store:
            record = PatientRecord("p1", Demographics("Name", "1985-02-03", "F", "x"))
            record = record.with_screening(
                ScreeningEntry(1700000000.0, "ref", None, 10.4, "anemic",
                               "moderate", "v1", 25.0)
            )
            store.put_record(record)

        out = tmp_path / "export.csv"
        monkeypatch.setenv("POCSCREEN_EXPORT_KEY", "epoch-key-1")
        code, payload, _ = capfdjson(["export", "--store", store_dir, "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("pseudonym,")
        assert "Name" not in out.read_text()
        assert ",10.400,anemic,moderate," in lines[1]
