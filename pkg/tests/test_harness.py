import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

import covgt.training as train_mod
from covgt.cli import main
from covgt.config import FIELDS, HELP, dump_config, load_config, parse_lines, reference_markdown
from covgt.errors import ConfigError, NumericalError
from covgt.gradcheck import gradcheck, require_pass, tiny_config
from covgt.model import CoVGT
from covgt.training import (Checkpoint, config_hash, cosine_lr, evaluate, load_compatible, metric_log_text,
                         model_config_for, pretrain, stream, train)


# -- schedule and seeds ----------------------------------------------------

def test_cosine_schedule_endpoints_and_monotone():
    T = 50
    lrs = [cosine_lr(i, T, 1e-3) for i in range(T)]
    assert lrs[0] == 1e-3
    assert lrs[-1] <= 1e-2 * 1e-3
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert cosine_lr(0, 1, 0.5) == 0.5


def test_sub_streams_are_independent_and_reproducible():
    a = stream(0, "data").random(4)
    assert np.array_equal(a, stream(0, "data").random(4))
    assert not np.array_equal(a, stream(0, "mlm").random(4))
    assert not np.array_equal(a, stream(1, "data").random(4))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        train_mod.TrainConfig(lr_init=0)
    with pytest.raises(ConfigError):
        train_mod.TrainConfig(hard_negative_mode="nearest")
    with pytest.raises(ConfigError):
        train_mod.TrainConfig(mlm_rate=1.0)


# -- training --------------------------------------------------------------

@pytest.fixture(scope="module")
def stage1_run(small_corpus, small_model_cfg, quick_train_cfg):
    return train(small_model_cfg, quick_train_cfg, small_corpus)


def test_metric_logs_bit_identical_across_runs(stage1_run, small_corpus, small_model_cfg, quick_train_cfg):
    again = train(small_model_cfg, quick_train_cfg, small_corpus)
    assert metric_log_text(again.history) == metric_log_text(stage1_run.history)
    for k, v in stage1_run.checkpoint.model_state.items():
        assert torch.equal(v, again.checkpoint.model_state[k])


def test_stage_two_leaves_text_encoder_untouched(stage1_run, small_corpus, small_model_cfg, quick_train_cfg):
    both = train(small_model_cfg, replace(quick_train_cfg, stage2_epochs=2), small_corpus)
    assert [r["stage"] for r in both.history] == [1, 1, 2, 2]
    s1, s2 = stage1_run.checkpoint.model_state, both.checkpoint.model_state
    text_keys = [k for k in s1 if k.startswith("text_encoder.")]
    assert text_keys
    for k in text_keys:
        assert torch.equal(s1[k], s2[k]), k
    if both.best_stage == 2:
        assert any(not torch.equal(s1[k], s2[k]) for k in s1 if k.startswith("global_trans."))
    assert both.best_val >= stage1_run.best_val


def test_checkpoint_roundtrip_changes_eval_by_zero(stage1_run, small_corpus, tmp_path):
    ckpt = stage1_run.checkpoint
    before = evaluate(ckpt.build_model(), small_corpus, "val")
    ckpt.save(tmp_path / "c.pt")
    loaded = Checkpoint.load(tmp_path / "c.pt", expect_hash=ckpt.config_hash)
    after = evaluate(loaded.build_model(), small_corpus, "val")
    assert after == before
    assert before["count"] == 16 and set(before["per_type"]) <= {"which", "how", "what"}
    assert sum(v["count"] for v in before["per_type"].values()) == 16
    with pytest.raises(ConfigError):
        Checkpoint.load(tmp_path / "c.pt", expect_hash="0" * 16)


def test_checkpoint_detects_tampered_config(stage1_run, tmp_path):
    ckpt = replace(stage1_run.checkpoint, model_config={**stage1_run.checkpoint.model_config, "d": 32})
    ckpt.save(tmp_path / "bad.pt")
    with pytest.raises(ConfigError, match="hash"):
        Checkpoint.load(tmp_path / "bad.pt")


def test_nan_loss_aborts(monkeypatch, small_corpus, small_model_cfg, quick_train_cfg):
    monkeypatch.setattr(CoVGT, "multichoice_loss", lambda self, batch, lam=1.0: torch.tensor(float("nan")))
    with pytest.raises(NumericalError, match="non-finite"):
        train(small_model_cfg, quick_train_cfg, small_corpus)


def test_patience_stops_stage(monkeypatch, small_corpus, small_model_cfg, quick_train_cfg):
    scores = iter([0.5, 0.4, 0.3, 0.2, 0.1, 0.0])
    monkeypatch.setattr(train_mod, "evaluate", lambda *a, **k: {"accuracy": next(scores)})
    cfg = replace(quick_train_cfg, epochs=6, patience=2)
    result = train(small_model_cfg, cfg, small_corpus)
    assert len(result.history) == 3 and result.best_val == 0.5 and result.checkpoint.epoch == 0


def test_train_loss_falls_by_epoch_five(small_corpus, small_model_cfg, quick_train_cfg):
    result = train(small_model_cfg, replace(quick_train_cfg, epochs=6, patience=10), small_corpus)
    losses = [r["train_loss"] for r in result.history]
    assert len(losses) == 6 and losses[5] < losses[0]


def test_untrained_model_scores_chance(small_model_cfg):
    from covgt.data.synthetic import SyntheticWorldSpec, generate_synthetic_dataset
    from covgt.data.workspace import corpus_from_synthetic
    from conftest import SMALL_WORLD

    ds = generate_synthetic_dataset(SyntheticWorldSpec(**SMALL_WORLD), {"train": 40, "val": 600}, seed=3)
    corpus = corpus_from_synthetic(ds, n=4, k=2, l_c=2)
    accs = []
    for seed in range(3):
        torch.manual_seed(seed)
        model = CoVGT(model_config_for(corpus, small_model_cfg))
        accs.append(evaluate(model, corpus, "val")["accuracy"])
    # Pooled over 3 initialisations: 1/5 within three binomial standard deviations.
    n = 3 * 600
    assert abs(np.mean(accs) - 0.2) <= 3 * math.sqrt(0.2 * 0.8 / n), accs


def test_pretrain_then_finetune(small_corpus, small_model_cfg, quick_train_cfg):
    cfg = replace(quick_train_cfg, pretrain_epochs=1, pretrain_negatives=3)
    result = pretrain(small_model_cfg, cfg, small_corpus)
    state = result.checkpoint.model_state
    assert any(k.startswith("mlm_head.") for k in state)
    assert len(result.history) == 1 and math.isfinite(result.history[0]["train_loss"])
    model = CoVGT(model_config_for(small_corpus, small_model_cfg))
    missing = load_compatible(model, state)
    assert missing == []
    assert torch.equal(model.text_encoder.tokens.weight, state["text_encoder.tokens.weight"])
    mlm_only = pretrain(small_model_cfg, replace(cfg, mlm_only=True), small_corpus)
    assert mlm_only.history[0]["train_loss"] < result.history[0]["train_loss"]


def test_pretrain_needs_enough_captions(small_corpus, small_model_cfg, quick_train_cfg):
    with pytest.raises(ConfigError):
        pretrain(small_model_cfg, replace(quick_train_cfg, pretrain_negatives=10_000), small_corpus)


def test_config_hash_tracks_every_field(small_model_cfg):
    assert config_hash(small_model_cfg) == config_hash(replace(small_model_cfg))
    assert config_hash(small_model_cfg) != config_hash(replace(small_model_cfg, gamma=2.0))


# -- gradient check --------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_report():
    return gradcheck(tiny_config())


def test_gradcheck_passes_on_tiny_config(tiny_report):
    assert tiny_report.passed, tiny_report.lines()
    assert tiny_report.max_error < 1e-4
    assert len(tiny_report.errors) == sum(1 for _ in CoVGT(tiny_config()).parameters())
    assert require_pass(tiny_report) is tiny_report


def test_gradcheck_catches_injected_fault():
    def corrupt(name, g):
        return g * 1.01 if name.startswith("dgt.edge_trans") else g

    report = gradcheck(tiny_config(), grad_hook=corrupt)
    assert not report.passed
    assert report.failed and all(n.startswith("dgt.edge_trans") for n in report.failed)
    with pytest.raises(NumericalError):
        require_pass(report)


def test_cli_gradcheck_fault_exits_nonzero(monkeypatch, capsys):
    import covgt.cli as cli

    def faulty(cfg, seed=0, tolerance=1e-4):
        return gradcheck(cfg, seed=seed, tolerance=tolerance,
                         grad_hook=lambda n, g: g + 1e-3 if n == "text_proj.weight" else g)

    monkeypatch.setattr(cli, "gradcheck", faulty)
    assert main(["gradcheck"]) == 3
    assert "text_proj.weight" in capsys.readouterr().err


# -- config files ----------------------------------------------------------

def test_config_parsing_and_overrides(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nd = 32\nuse_dgt = false  # trailing\nlr_init=5e-5\n")
    model, tr = load_config(tmp_path / "c.txt", ["d=16", "placement=frame+clip"])
    assert (model.d, model.use_dgt, model.placement, tr.lr_init) == (16, False, "frame+clip", 5e-5)
    with pytest.raises(ConfigError, match="unknown"):
        parse_lines(["dd = 3"])
    with pytest.raises(ConfigError, match="parse"):
        parse_lines(["use_dgt = maybe"])
    with pytest.raises(ConfigError):
        parse_lines(["just words"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.txt")


def test_dump_config_roundtrips(tmp_path):
    model, tr = load_config(None, ["d=32", "mlm_only=true"])
    (tmp_path / "c.txt").write_text(dump_config(model, tr))
    assert load_config(tmp_path / "c.txt") == (model, tr)


def test_reference_page_documents_every_key():
    assert set(HELP) == set(FIELDS)
    text = reference_markdown()
    for key in FIELDS:
        assert f"`{key}`" in text


def test_generated_reference_is_current():
    from pathlib import Path
    page = Path(__file__).resolve().parents[1] / "docs" / "config_reference.md"
    assert page.read_text(encoding="utf-8") == reference_markdown() + "\n", (
        "regenerate with: covgt config-reference --out docs/config_reference.md")


# -- command line ----------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code = main(["prepare-synthetic", "--out", str(root / "ws"), "--train", "48", "--val", "16",
                 "--world", "k=2", "--world", "l_c=2", "--world", "dim_r=24", "--world", "dim_a=8"])
    assert code == 0
    return root


def _cfg_file(root):
    path = root / "small.txt"
    path.write_text("d = 16\nn = 4\nk = 2\nl_c = 2\nheads = 2\nedge_heads = 4\ntext_layers = 1\n"
                    "text_heads = 2\nmax_len = 24\nbatch_size = 16\nepochs = 1\nstage2_epochs = 1\n"
                    "n_neg_questions = 2\npretrain_negatives = 3\npretrain_epochs = 1\n")
    return path


def test_cli_end_to_end(workspace, capsys):
    ws, cfg = workspace / "ws", _cfg_file(workspace)
    run = workspace / "run"
    assert main(["pretrain", "--workspace", str(ws), "--config", str(cfg), "--out", str(workspace / "pre")]) == 0
    assert main(["train", "--workspace", str(ws), "--config", str(cfg), "--out", str(run),
                 "--init", str(workspace / "pre" / "pretrained.pt")]) == 0
    for name in ("checkpoint.pt", "metrics.tsv", "curves.png", "config.txt"):
        assert (run / name).stat().st_size > 0
    assert main(["eval", "--workspace", str(ws), "--checkpoint", str(run / "checkpoint.pt"),
                 "--split", "val_novel", "--out", str(run)]) == 0
    report = json.loads((run / "report_val_novel.json").read_text())
    assert report["count"] == 16 and (run / "per_type_val_novel.png").exists()
    assert (run / "report_val_novel.tsv").read_text().splitlines()[0] == "type\tcount\taccuracy"
    out = capsys.readouterr().out
    assert "overall\t16\t" in out
    assert main(["predict", "--workspace", str(ws), "--checkpoint", str(run / "checkpoint.pt"),
                 "--out", str(run / "p.jsonl")]) == 0
    assert len((run / "p.jsonl").read_text().splitlines()) == 16
    pack = next((ws / "packs").iterdir())
    assert main(["inspect-pack", str(pack)]) == 0
    assert '"n_raw": 6' in capsys.readouterr().out


def test_cli_validation_errors_exit_2(workspace, tmp_path, capsys):
    ws = workspace / "ws"
    assert main(["train", "--workspace", str(ws), "--set", "bogus=1", "--out", str(tmp_path)]) == 2
    assert main(["train", "--workspace", str(tmp_path), "--out", str(tmp_path)]) == 2
    (tmp_path / "x.cvgt").write_bytes(b"NOPE" + bytes(20))
    assert main(["inspect-pack", str(tmp_path / "x.cvgt")]) == 2
    assert main(["prepare-synthetic", "--out", str(tmp_path / "w"), "--world", "k=9"]) == 2
    err = capsys.readouterr().err
    assert "unknown config key" in err and "bad_magic" in err


def test_cli_nan_exits_3(workspace, tmp_path, monkeypatch):
    monkeypatch.setattr(CoVGT, "multichoice_loss", lambda self, batch, lam=1.0: torch.tensor(float("inf")))
    code = main(["train", "--workspace", str(workspace / "ws"), "--config", str(_cfg_file(workspace)),
                 "--out", str(tmp_path)])
    assert code == 3


def test_cli_config_reference(tmp_path):
    assert main(["config-reference", "--out", str(tmp_path / "ref.md")]) == 0
    assert (tmp_path / "ref.md").read_text().startswith("# Configuration reference")
