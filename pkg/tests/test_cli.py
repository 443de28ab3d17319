import json

import numpy as np
import pytest
from conftest import StubServer, random_store

from ragcap import load_store, save_store
from ragcap.cli import build_parser, main
from ragcap.store import write_vector_table


def run(args, capsys):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def store_base(tmp_path, fixture_store):
    base = tmp_path / "fixture"
    save_store(fixture_store, base)
    return base


@pytest.fixture()
def queries_tsv(tmp_path, fixture_store):
    path = tmp_path / "queries.tsv"
    with open(path, "w", encoding="utf-8") as fh:
        write_vector_table(fh, fixture_store.ids, fixture_store.matrix)
    return path


class TestBuild:
    def test_build_from_ingest_tsv(self, tmp_path, capsys):
        src = tmp_path / "in.tsv"
        src.write_text(
            "id1\tsrcA\t3,4\tthree four caption\n"
            "id2\tsrcA\t0,5\tvertical caption\n",
            encoding="utf-8",
        )
        out = tmp_path / "built"
        code, stdout, _ = run(["build-support", "--tsv", src, "--out", out], capsys)
        assert code == 0
        record = json.loads(stdout)
        assert record["count"] == 2 and record["dim"] == 2
        store = load_store(out)
        np.testing.assert_allclose(store.matrix[0], [0.6, 0.8], atol=1e-7)

    def test_build_from_meta_and_bin(self, tmp_path, store_base, capsys):
        out = tmp_path / "rebuilt"
        code, stdout, _ = run(
            ["build-datastore", "--meta", f"{store_base}.tsv",
             "--bin", f"{store_base}.bin", "--out", out, "--label", "ds"],
            capsys,
        )
        assert code == 0
        assert json.loads(stdout)["label"] == "ds"
        assert load_store(out).matrix.tobytes() == load_store(store_base).matrix.tobytes()

    def test_missing_input_is_exit_1(self, tmp_path, capsys):
        code, _, err = run(["build-support", "--out", tmp_path / "x"], capsys)
        assert code == 1
        assert "--tsv" in err


class TestStoreOps:
    def test_merge_and_filter(self, tmp_path, store_base, capsys):
        other = random_store(5, 32, seed=7, prefix="o", label="other", source="B")
        save_store(other, tmp_path / "other")
        code, stdout, _ = run(
            ["merge", "--a", store_base, "--b", tmp_path / "other",
             "--out", tmp_path / "merged"],
            capsys,
        )
        assert code == 0 and json.loads(stdout)["count"] == 55
        code, stdout, _ = run(
            ["filter", "--store", tmp_path / "merged", "--out", tmp_path / "filtered",
             "--exclude", "B"],
            capsys,
        )
        assert code == 0 and json.loads(stdout)["count"] == 50

    def test_adapt_replace(self, tmp_path, store_base, capsys):
        other = random_store(5, 32, seed=8, prefix="t", label="target")
        save_store(other, tmp_path / "target")
        code, stdout, _ = run(
            ["adapt", "--support", store_base, "--datastore", store_base,
             "--new-support", tmp_path / "target", "--new-datastore", tmp_path / "target",
             "--mode", "replace", "--out-support", tmp_path / "as",
             "--out-datastore", tmp_path / "ad"],
            capsys,
        )
        assert code == 0
        record = json.loads(stdout)
        assert record["support"]["count"] == 5
        assert load_store(tmp_path / "as").texts == other.texts


class TestRetrieve:
    def test_inference_topk(self, store_base, queries_tsv, capsys):
        code, stdout, _ = run(
            ["retrieve", "--datastore", store_base, "--queries", queries_tsv,
             "--k", "2"],
            capsys,
        )
        assert code == 0
        lines = stdout.strip().split("\n")
        assert len(lines) == 50
        first = json.loads(lines[0])
        assert first["hits"][0]["id"] == first["query_id"]
        assert first["hits"][0]["similarity"] == 1.0

    def test_bad_window_is_exit_1(self, store_base, queries_tsv, capsys):
        code, _, err = run(
            ["retrieve", "--datastore", store_base, "--queries", queries_tsv,
             "--mode", "training", "--seed", "1", "--s-min", "0.9", "--s-max", "0.1"],
            capsys,
        )
        assert code == 1
        assert "s_min" in err

    def test_training_mode_requires_seed(self, store_base, queries_tsv, capsys):
        code, _, err = run(
            ["retrieve", "--datastore", store_base, "--queries", queries_tsv,
             "--mode", "training"],
            capsys,
        )
        assert code == 1
        assert "seed" in err


class TestProject:
    def test_project_composes_with_retrieve(self, tmp_path, store_base, queries_tsv, capsys):
        out = tmp_path / "projected.tsv"
        code, _, _ = run(
            ["project", "--support", store_base, "--queries", queries_tsv,
             "--temperature", "1e-6", "--out", out],
            capsys,
        )
        assert code == 0
        code, stdout, _ = run(
            ["retrieve", "--datastore", store_base, "--queries", out, "--k", "1"],
            capsys,
        )
        assert code == 0
        for line in stdout.strip().split("\n"):
            record = json.loads(line)
            assert record["hits"][0]["id"] == record["query_id"]


class TestMakeTrainData:
    def test_deterministic_files(self, tmp_path, capsys):
        from ragcap import GapSpec, synth_paired_corpus

        corpus, _ = synth_paired_corpus(
            GapSpec(dim=64, n_pairs=40, offset_norm=0.0, noise_sigma=0.0,
                    n_clusters=5, cluster_spread=0.0625, seed=31, label="train")
        )
        save_store(corpus, tmp_path / "corpus")
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            code, _, _ = run(
                ["make-train-data", "--corpus", tmp_path / "corpus",
                 "--datastore", tmp_path / "corpus", "--seed", "7",
                 "--out", tmp_path / name],
                capsys,
            )
            assert code == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]
        record = json.loads(outs[0].decode().split("\n")[0])
        assert list(record) == ["embedding", "captions", "prompt", "target", "similarities"]

    def test_requires_seed(self, store_base, capsys):
        code, _, err = run(
            ["make-train-data", "--corpus", store_base, "--datastore", store_base],
            capsys,
        )
        assert code == 1 and "seed" in err


class TestCaption:
    def test_mock_happy_path(self, tmp_path, store_base, queries_tsv, capsys):
        out = tmp_path / "captions.jsonl"
        code, _, _ = run(
            ["caption", "--support", store_base, "--datastore", store_base,
             "--queries", queries_tsv, "--temperature", "1e-6", "--out", out],
            capsys,
        )
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 50
        store = load_store(store_base)
        for line, entry in zip(lines, store):
            record = json.loads(line)
            assert record["item_id"] == entry.id
            assert record["caption"] == entry.text

    def test_http_backend_records_and_replays(self, tmp_path, store_base, queries_tsv, capsys):
        transcript = tmp_path / "t.jsonl"

        def script(n, body):
            return 200, {"text": f"remote caption for {body['request_id']}"}

        with StubServer(script) as server:
            code, live_out, _ = run(
                ["caption", "--support", store_base, "--datastore", store_base,
                 "--queries", queries_tsv, "--backend", "http",
                 "--endpoint", server.url, "--record", transcript],
                capsys,
            )
        assert code == 0
        code, replay_out, _ = run(
            ["caption", "--support", store_base, "--datastore", store_base,
             "--queries", queries_tsv, "--backend", "replay",
             "--transcript", transcript],
            capsys,
        )
        assert code == 0
        assert live_out == replay_out

    def test_backend_failure_is_exit_2(self, store_base, queries_tsv, capsys):
        code, stdout, err = run(
            ["caption", "--support", store_base, "--datastore", store_base,
             "--queries", queries_tsv, "--backend", "http",
             "--endpoint", "http://127.0.0.1:9/generate",
             "--max-retries", "0", "--parallelism", "4", "--k", "1"],
            capsys,
        )
        assert code == 2
        assert "backend" in err
        # per-item error records are still emitted for the whole batch
        assert len(stdout.strip().split("\n")) == 50

    def test_unreadable_transcript_is_exit_1(self, store_base, queries_tsv, capsys):
        code, _, _ = run(
            ["caption", "--support", store_base, "--datastore", store_base,
             "--queries", queries_tsv, "--backend", "replay",
             "--transcript", "/nonexistent/transcript.jsonl"],
            capsys,
        )
        assert code == 1

    def test_no_projection_flag(self, store_base, queries_tsv, capsys):
        code, stdout, _ = run(
            ["caption", "--support", store_base, "--datastore", store_base,
             "--queries", queries_tsv, "--no-projection"],
            capsys,
        )
        assert code == 0
        assert all(
            json.loads(line)["entropy"] == 0.0
            for line in stdout.strip().split("\n")
        )


class TestGapStatsAndRoundtrip:
    def test_synth_gap_stats(self, capsys):
        code, stdout, _ = run(
            ["gap-stats", "--synth", "--dim", "32", "--pairs", "100",
             "--offset", "0.0", "--noise", "0.0", "--seed", "5"],
            capsys,
        )
        assert code == 0
        record = json.loads(stdout)
        assert record["mean_paired_cosine"] == 1.0
        assert record["mean_nn_rank"] == 1.0

    def test_file_gap_stats(self, tmp_path, store_base, queries_tsv, capsys):
        code, stdout, _ = run(
            ["gap-stats", "--store", store_base, "--audio", queries_tsv],
            capsys,
        )
        assert code == 0
        assert json.loads(stdout)["mean_paired_cosine"] == 1.0

    def test_roundtrip_table(self, store_base, capsys):
        code, stdout, err = run(
            ["roundtrip", "--corpus", store_base, "--temperatures", "1e-6,1"],
            capsys,
        )
        assert code == 0
        lines = [json.loads(line) for line in stdout.strip().split("\n")]
        assert lines[0] == {"temperature": 1e-6, "rate": 1.0}
        assert lines[1]["rate"] < 1.0
        assert "temperature" in err  # summary table on stderr


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path, store_base, queries_tsv, capsys):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"k": 5, "datastore": str(store_base)}))
        code, stdout, _ = run(
            ["retrieve", "--config", config, "--queries", queries_tsv], capsys
        )
        assert code == 0
        assert len(json.loads(stdout.split("\n")[0])["hits"]) == 5
        code, stdout, _ = run(
            ["retrieve", "--config", config, "--queries", queries_tsv, "--k", "2"],
            capsys,
        )
        assert code == 0
        assert len(json.loads(stdout.split("\n")[0])["hits"]) == 2


class TestHelp:
    def test_every_flag_documented(self, capsys):
        parser = build_parser()
        subparsers = next(
            a for a in parser._actions
            if isinstance(a, __import__("argparse")._SubParsersAction)
        )
        seen = set()
        for name, sub in subparsers.choices.items():
            if id(sub) in seen:
                continue
            seen.add(id(sub))
            help_text = sub.format_help()
            for action in sub._actions:
                for option in action.option_strings:
                    assert option in help_text, (name, option)

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["caption", "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out
