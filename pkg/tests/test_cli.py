"""End-to-end tests of the command-line stages, driven through main()."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from reasforge.cli import main
from reasforge.generation import render_prompt
from reasforge.records import (
    RawSample,
    decode_example,
    decode_trace,
    load_samples,
    read_jsonl,
    write_jsonl,
)
from reasforge.rng import SplitMix64
from reasforge.trainer import load_model

DATA = Path(__file__).resolve().parent / "data"
SAMPLES = str(DATA / "cli_samples.jsonl")
TRACES = str(DATA / "cli_traces.jsonl")
GOLDEN = str(DATA / "cli_refined_golden.jsonl")


def _corpus(path: Path, n: int = 30) -> str:
    rng = SplitMix64(99)
    options = ("oak table", "tin lantern", "glass jar", "wool scarf")
    samples = [
        RawSample(
            sample_id=f"m{i:03d}",
            video_ref=f"vid://m/{i}",
            question=f"What appears at moment {i}?",
            options=options,
            gold_index=rng.randrange(4),
            category="temporal" if i % 2 else "causal",
        )
        for i in range(n)
    ]
    out = path / "samples.jsonl"
    write_jsonl(out, samples)
    return str(out)


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "SUBCOMMAND" in capsys.readouterr().out
    assert main(["refine", "--help"]) == 0


def test_usage_errors_exit_64(capsys):
    assert main(["frobnicate"]) == 64
    assert main([]) == 64
    assert main(["refine", "--no-such-flag"]) == 64
    assert main(["refine", "--in", TRACES, "--samples", SAMPLES]) == 64
    err = capsys.readouterr().err
    assert "--out" in err


def test_missing_input_file_exits_2(tmp_path, capsys):
    out = str(tmp_path / "r.jsonl")
    assert main(["refine", "--in", str(tmp_path / "nope.jsonl"),
                 "--samples", SAMPLES, "--out", out]) == 2


def test_prompts_renders_each_sample(tmp_path):
    out = tmp_path / "prompts.jsonl"
    assert main(["prompts", "--samples", SAMPLES, "--out", str(out),
                 "--frames", "3", "--total-frames", "90"]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    samples = load_samples(SAMPLES)
    assert len(rows) == len(samples)
    assert rows[0]["prompt_text"] == render_prompt(samples[0])
    assert rows[0]["n_frames"] == 3
    assert rows[0]["frame_refs"] == [f"{samples[0].video_ref}#frame{i}" for i in (0, 30, 60)]


def test_mock_generate_is_deterministic(tmp_path):
    samples = _corpus(tmp_path)
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    assert main(["mock-generate", "--samples", samples, "--out", a,
                 "--error-rate", "0.4", "--seed", "3"]) == 0
    assert main(["mock-generate", "--samples", samples, "--out", b,
                 "--error-rate", "0.4", "--seed", "3"]) == 0
    assert Path(a).read_bytes() == Path(b).read_bytes()
    traces = read_jsonl(a, decode_trace)
    assert len(traces) == 30


def test_classify_is_idempotent_on_generated_traces(tmp_path):
    samples = _corpus(tmp_path)
    raw = str(tmp_path / "raw.jsonl")
    redone = str(tmp_path / "redone.jsonl")
    main(["mock-generate", "--samples", samples, "--out", raw, "--seed", "5"])
    assert main(["classify", "--in", raw, "--samples", samples, "--out", redone]) == 0
    assert Path(raw).read_bytes() == Path(redone).read_bytes()


def test_refine_matches_golden_file(tmp_path):
    out = tmp_path / "refined.jsonl"
    assert main(["refine", "--in", TRACES, "--samples", SAMPLES, "--out", str(out)]) == 0
    assert out.read_bytes() == Path(GOLDEN).read_bytes()
    sidecar = json.loads((tmp_path / "refined.jsonl.stats.json").read_text())
    assert sidecar["traces_in"] == 4
    assert sidecar["traces_out"] == 4
    assert sidecar["sentences_removed_per_pattern"] == {"1": 1, "6": 1, "7": 1}
    assert sidecar["scrub_events"] == 3


def test_refine_can_drop_unclassifiable(tmp_path):
    out = tmp_path / "refined.jsonl"
    assert main(["refine", "--in", TRACES, "--samples", SAMPLES, "--out", str(out),
                 "--drop-unclassifiable"]) == 0
    ids = [json.loads(line)["sample_id"] for line in out.read_text().splitlines()]
    assert ids == ["c001", "c002", "c004"]


def test_config_file_fills_options_and_flags_win(tmp_path, capsys):
    samples = _corpus(tmp_path)
    config = tmp_path / "pipeline.ini"
    config.write_text("[mock-generate]\nerror-rate = 1.0\nseed = 8\n")
    from_config = str(tmp_path / "cfg.jsonl")
    assert main(["mock-generate", "--config", str(config),
                 "--samples", samples, "--out", from_config]) == 0
    traces = read_jsonl(from_config, decode_trace)
    assert all(t.classification.value == "Incorrect" for t in traces)

    overridden = str(tmp_path / "flag.jsonl")
    assert main(["mock-generate", "--config", str(config), "--samples", samples,
                 "--out", overridden, "--error-rate", "0.0"]) == 0
    traces = read_jsonl(overridden, decode_trace)
    assert all(t.classification.value == "Correct" for t in traces)


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    samples = _corpus(tmp_path)
    config = tmp_path / "bad.ini"
    config.write_text("[mock-generate]\nerror-rat = 0.5\n")
    assert main(["mock-generate", "--config", str(config), "--samples", samples,
                 "--out", str(tmp_path / "x.jsonl")]) == 1
    assert "error-rat" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["mock-generate", "--config", str(tmp_path / "ghost.ini"),
                 "--samples", SAMPLES, "--out", str(tmp_path / "x.jsonl")]) == 2


def _built_pipeline(tmp_path, mode="mtl-all", extra=()):
    samples = _corpus(tmp_path)
    traces = str(tmp_path / "traces.jsonl")
    refined = str(tmp_path / "refined.jsonl")
    dataset = str(tmp_path / "ds")
    main(["mock-generate", "--samples", samples, "--out", traces,
          "--error-rate", "0.3", "--seed", "2"])
    main(["refine", "--in", traces, "--samples", samples, "--out", refined])
    code = main(["build", "--samples", samples, "--traces", traces, "--refined", refined,
                 "--out", dataset, "--mode", mode, *extra])
    assert code == 0
    return samples, traces, refined, dataset


def test_build_is_deterministic(tmp_path):
    samples, traces, refined, dataset = _built_pipeline(
        tmp_path, extra=["--cr-fraction", "0.5", "--seed", "7"])
    again = str(tmp_path / "ds2")
    assert main(["build", "--samples", samples, "--traces", traces, "--refined", refined,
                 "--out", again, "--mode", "mtl-all", "--cr-fraction", "0.5",
                 "--seed", "7"]) == 0
    for name in ("train.jsonl", "manifest.json"):
        assert (Path(dataset) / name).read_bytes() == (Path(again) / name).read_bytes()


def test_build_mode_names_map_to_manifest_modes(tmp_path):
    samples, traces, refined, dataset = _built_pipeline(tmp_path, mode="stl-cr")
    manifest = json.loads((Path(dataset) / "manifest.json").read_text())
    assert manifest["mode"] == "StlCr"
    assert set(manifest["source_digests"]) == {"samples", "traces", "refined"}


def test_build_requires_refined_for_reasoning_modes(tmp_path, capsys):
    samples = _corpus(tmp_path)
    traces = str(tmp_path / "traces.jsonl")
    main(["mock-generate", "--samples", samples, "--out", traces, "--seed", "2"])
    assert main(["build", "--samples", samples, "--traces", traces,
                 "--out", str(tmp_path / "ds"), "--mode", "mtl-all"]) == 1
    assert "--refined" in capsys.readouterr().err
    assert main(["build", "--samples", samples, "--traces", traces,
                 "--out", str(tmp_path / "ds"), "--mode", "stl-qa"]) == 0


def test_stats_json_and_table(tmp_path, capsys):
    samples, traces, refined, _ = _built_pipeline(tmp_path)
    capsys.readouterr()  # discard stage chatter
    assert main(["stats", "--traces", traces, "--samples", samples,
                 "--refined", refined, "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["total"] == 30
    assert payload["total"] == payload["correct"] + payload["incorrect"] + payload["unclassifiable"]
    assert "refinement" in payload
    assert main(["stats", "--traces", traces, "--samples", samples]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "category" in out


def test_train_writes_artifacts_and_reads_manifest_weights(tmp_path, capsys):
    samples, _, _, dataset = _built_pipeline(
        tmp_path, extra=["--alpha", "0.7", "--beta", "0.3"])
    run = tmp_path / "run"
    assert main(["train", "--dataset", dataset, "--samples", samples,
                 "--out-dir", str(run), "--epochs", "2", "--seed", "1"]) == 0
    for name in ("model.bin", "vocab.json", "history.csv"):
        assert (run / name).exists()
    _, header = load_model(run / "model.bin")
    assert header["config"]["alpha"] == 0.7
    assert header["config"]["beta"] == 0.3
    assert header["config"]["epochs"] == 2
    history = (run / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,loss,c_qa,c_rea,eval_acc"
    assert len(history) == 3


def test_train_beta_flag_overrides_manifest(tmp_path):
    samples, _, _, dataset = _built_pipeline(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--dataset", dataset, "--samples", samples,
                 "--out-dir", str(run), "--epochs", "1", "--beta", "0.25"]) == 0
    _, header = load_model(run / "model.bin")
    assert header["config"]["alpha"] == 0.75
    assert header["config"]["beta"] == 0.25


def test_eval_reports_accuracy_and_enforces_disjointness(tmp_path, capsys):
    samples, _, _, dataset = _built_pipeline(tmp_path)
    run = tmp_path / "run"
    main(["train", "--dataset", dataset, "--samples", samples,
          "--out-dir", str(run), "--epochs", "1"])
    held_out_path = tmp_path / "held_out.jsonl"
    write_jsonl(held_out_path, [
        RawSample("h001", "vid://h/1", "What appears last?",
                  ("oak table", "tin lantern", "glass jar", "wool scarf"), 1, "temporal"),
    ])
    capsys.readouterr()  # discard stage chatter
    assert main(["eval", "--model", str(run / "model.bin"), "--vocab", str(run / "vocab.json"),
                 "--samples", str(held_out_path), "--manifest",
                 str(Path(dataset) / "manifest.json"), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["total"] == 1
    assert 0.0 <= payload["accuracy"] <= 1.0

    assert main(["eval", "--model", str(run / "model.bin"), "--vocab", str(run / "vocab.json"),
                 "--samples", samples, "--manifest",
                 str(Path(dataset) / "manifest.json")]) == 1
    assert "training set" in capsys.readouterr().err


def test_eval_rejects_mismatched_vocab(tmp_path, capsys):
    samples, _, _, dataset = _built_pipeline(tmp_path)
    run = tmp_path / "run"
    main(["train", "--dataset", dataset, "--samples", samples,
          "--out-dir", str(run), "--epochs", "1"])
    (run / "vocab.json").write_text('["alien", "tokens"]\n')
    assert main(["eval", "--model", str(run / "model.bin"),
                 "--vocab", str(run / "vocab.json"), "--samples", samples]) == 1
    assert "vocabulary" in capsys.readouterr().err


def test_sweep_beta_writes_csv(tmp_path, capsys):
    samples, _, _, dataset = _built_pipeline(tmp_path)
    out = tmp_path / "sweep.csv"
    assert main(["sweep-beta", "--dataset", dataset, "--samples", samples,
                 "--betas", "0.0,0.5", "--out", str(out), "--epochs", "1"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "beta,eval_acc"
    assert len(lines) == 3
    assert lines[1].startswith("0.0,")
    assert lines[2].startswith("0.5,")


class _ChatHandler(BaseHTTPRequestHandler):
    status = 200

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        question = payload["messages"][0]["content"][0]["text"]
        body = json.dumps({
            "choices": [{"message": {"content": "The first frame settles it. ###Answer: A"}}]
        }).encode("utf-8")
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    finally:
        server.shutdown()
        thread.join()


def test_generate_against_local_endpoint(tmp_path, chat_server):
    _ChatHandler.status = 200
    samples = _corpus(tmp_path, n=4)
    out = tmp_path / "traces.jsonl"
    assert main(["generate", "--samples", samples, "--out", str(out),
                 "--endpoint", chat_server, "--model", "stub-chat",
                 "--concurrency", "2"]) == 0
    traces = read_jsonl(out, decode_trace)
    assert len(traces) == 4
    assert all(t.predicted_index == 0 for t in traces)
    assert all(t.generator_id == "stub-chat" for t in traces)


def test_generate_auth_failure_exits_2(tmp_path, chat_server, capsys):
    _ChatHandler.status = 401
    samples = _corpus(tmp_path, n=2)
    assert main(["generate", "--samples", samples, "--out", str(tmp_path / "t.jsonl"),
                 "--endpoint", chat_server, "--model", "stub-chat"]) == 2
    assert "credentials" in capsys.readouterr().err
