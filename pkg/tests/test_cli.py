import json

import pytest

from hebatch.cli import main
from hebatch.paillier import import_key


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    lines = [json.loads(line) for line in out.out.strip().splitlines() if line]
    return code, lines, out.err


class TestKeygen:
    def test_writes_key_file(self, tmp_path, capsys):
        path = tmp_path / "key.json"
        code, lines, _ = run_cli(capsys, "keygen", "--bits", "128", "--unsafe",
                                 "--seed", "1", "--out", str(path))
        assert code == 0
        assert lines[0]["key_bits"] == 128
        loaded = import_key(json.loads(path.read_text()))
        assert loaded.public.key_bits == 128

    def test_refuses_overwrite_without_force(self, tmp_path, capsys):
        path = tmp_path / "key.json"
        run_cli(capsys, "keygen", "--bits", "128", "--unsafe", "--seed", "1",
                "--out", str(path))
        code, _, err = run_cli(capsys, "keygen", "--bits", "128", "--unsafe",
                               "--seed", "2", "--out", str(path))
        assert code == 2
        assert "force" in err
        code, _, _ = run_cli(capsys, "keygen", "--bits", "128", "--unsafe",
                             "--seed", "2", "--out", str(path), "--force")
        assert code == 0

    def test_round_trip_same_key(self, tmp_path, capsys):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(capsys, "keygen", "--bits", "128", "--unsafe", "--seed", "9",
                "--out", str(p1))
        run_cli(capsys, "keygen", "--bits", "128", "--unsafe", "--seed", "9",
                "--out", str(p2))
        assert p1.read_text() == p2.read_text()

    def test_tiny_bits_rejected_even_unsafe(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "keygen", "--bits", "8", "--unsafe",
                               "--out", str(tmp_path / "k.json"))
        assert code == 2
        assert "16" in err

    def test_small_bits_need_unsafe(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "keygen", "--bits", "128",
                               "--out", str(tmp_path / "k.json"))
        assert code == 2
        assert "insecure" in err

    def test_public_only_export(self, tmp_path, capsys):
        path = tmp_path / "pub.json"
        run_cli(capsys, "keygen", "--bits", "128", "--unsafe", "--seed", "3",
                "--out", str(path), "--public-only")
        data = json.loads(path.read_text())
        assert "p" not in data and "q" not in data


class TestBench:
    def test_report_schema(self, capsys):
        code, lines, _ = run_cli(capsys, "bench", "--op", "hmul", "--count", "64",
                                 "--key-bits", "128", "--warmup", "1",
                                 "--repeats", "2")
        assert code == 0
        report = lines[0]
        assert report["operator"] == "hmul"
        assert report["backend"] == "naive"
        assert report["count"] == 64
        assert report["key_bits"] == 128
        assert report["throughput"] == pytest.approx(64 / report["wall_time_s"])
        assert set(report["ledger"]) == {"uploads", "downloads",
                                         "serializations", "deserializations"}

    def test_count_one_has_no_division_error(self, capsys):
        code, lines, _ = run_cli(capsys, "bench", "--op", "hadd", "--count", "1",
                                 "--key-bits", "128", "--warmup", "0",
                                 "--repeats", "1")
        assert code == 0
        assert lines[0]["count"] == 1
        assert lines[0]["throughput"] > 0

    @pytest.mark.parametrize("op", ["encode", "decode", "henc", "hdec",
                                    "hmul", "hadd", "hmatmul", "hsum"])
    def test_verify_passes_for_every_operator(self, capsys, op):
        code, lines, _ = run_cli(capsys, "bench", "--op", op, "--count", "48",
                                 "--key-bits", "128", "--warmup", "0",
                                 "--repeats", "1", "--verify", "--workers", "2")
        assert code == 0
        assert lines[0]["verified"] is True

    def test_unknown_op_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--op", "hdiv"])
        assert exc.value.code == 2

    def test_parallel_backend_runs(self, capsys):
        code, lines, _ = run_cli(capsys, "bench", "--op", "hadd", "--count", "32",
                                 "--key-bits", "128", "--backend", "parallel",
                                 "--workers", "2", "--warmup", "0", "--repeats", "1")
        assert code == 0
        assert lines[0]["backend"] == "parallel"


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "data.csv"
    code, _, _ = run_cli(capsys, "synth", "--rows", "48", "--features", "4",
                         "--seed", "11", "--out", str(path))
    assert code == 0
    return str(path)


class TestTrain:
    def test_hetero_log_lines(self, dataset, capsys):
        code, lines, _ = run_cli(capsys, "train", "--mode", "hetero",
                                 "--dataset", dataset, "--epochs", "2",
                                 "--batch-size", "16", "--key-bits", "256",
                                 "--seed", "5")
        assert code == 0
        header, *epochs = lines
        assert header["mode"] == "hetero"
        assert header["key_bits"] == 256
        assert len(epochs) == 2
        for i, entry in enumerate(epochs, start=1):
            assert entry["epoch"] == i
            assert 0 < entry["loss"] < 1.0
            assert "ledger" in entry

    def test_zero_epochs_header_only(self, dataset, capsys):
        code, lines, _ = run_cli(capsys, "train", "--mode", "hetero",
                                 "--dataset", dataset, "--epochs", "0",
                                 "--key-bits", "256")
        assert code == 0
        assert len(lines) == 1

    def test_oracle_deviation_reported(self, dataset, capsys):
        code, lines, _ = run_cli(capsys, "train", "--mode", "hetero",
                                 "--dataset", dataset, "--epochs", "2",
                                 "--batch-size", "16", "--key-bits", "256",
                                 "--seed", "5", "--oracle")
        assert code == 0
        assert lines[-1]["oracle_max_loss_deviation"] <= 1e-4

    def test_cache_off_transfers_more(self, dataset, capsys):
        runs = {}
        for cache in ("on", "off"):
            code, lines, _ = run_cli(capsys, "train", "--mode", "hetero",
                                     "--dataset", dataset, "--epochs", "1",
                                     "--batch-size", "16", "--key-bits", "256",
                                     "--seed", "5", "--cache", cache)
            assert code == 0
            runs[cache] = lines[-1]
        assert runs["on"]["loss"] == pytest.approx(runs["off"]["loss"], abs=1e-12)
        assert (runs["on"]["ledger"]["downloads"]["bytes"]
                < runs["off"]["ledger"]["downloads"]["bytes"])

    def test_homo_mode(self, dataset, capsys):
        code, lines, _ = run_cli(capsys, "train", "--mode", "homo",
                                 "--dataset", dataset, "--epochs", "2",
                                 "--parties", "2", "--key-bits", "256",
                                 "--seed", "6", "--oracle")
        assert code == 0
        assert lines[-1]["oracle_max_loss_deviation"] <= 1e-6

    def test_missing_dataset_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "train", "--mode", "hetero",
                               "--dataset", "/nonexistent.csv", "--epochs", "1")
        assert code == 2
        assert err


class TestSynth:
    def test_joint_file_shape(self, tmp_path, capsys):
        path = tmp_path / "s.csv"
        code, lines, _ = run_cli(capsys, "synth", "--rows", "100", "--features",
                                 "4", "--seed", "2", "--out", str(path))
        assert code == 0
        rows = path.read_text().strip().splitlines()
        assert len(rows) == 101
        assert rows[0].split(",") == ["id", "f0", "f1", "f2", "f3", "label"]
        assert all(len(r.split(",")) == 6 for r in rows)

    def test_deterministic_by_seed(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(capsys, "synth", "--rows", "30", "--features", "3", "--seed", "4",
                "--out", str(a))
        run_cli(capsys, "synth", "--rows", "30", "--features", "3", "--seed", "4",
                "--out", str(b))
        assert a.read_text() == b.read_text()

    def test_vertical_split_files(self, tmp_path, capsys):
        out = tmp_path / "v.csv"
        code, lines, _ = run_cli(capsys, "synth", "--rows", "20", "--features",
                                 "4", "--mode", "vertical", "--parties", "2",
                                 "--seed", "3", "--out", str(out))
        assert code == 0
        files = lines[0]["files"]
        assert len(files) == 2
        guest = (tmp_path / "v_guest.csv").read_text().splitlines()
        host = (tmp_path / "v_host.csv").read_text().splitlines()
        assert "label" in guest[0]
        assert "label" not in host[0]

    def test_trains_below_log2_in_five_epochs(self, tmp_path, capsys):
        import math

        path = tmp_path / "sep.csv"
        run_cli(capsys, "synth", "--rows", "120", "--features", "4", "--seed",
                "8", "--noise", "0.05", "--out", str(path))
        code, lines, _ = run_cli(capsys, "train", "--mode", "hetero",
                                 "--dataset", str(path), "--epochs", "5",
                                 "--batch-size", "32", "--key-bits", "256",
                                 "--seed", "8")
        assert code == 0
        assert lines[-1]["loss"] < math.log(2)
