import json

import pytest

from synth import synthetic_pairs
from uwenhance.cli import main
from uwenhance.imaging import DatasetManifest, ManifestEntry, save_image
from uwenhance.iqa.reports import read_metric_csv

TINY = "base_channels = 8\n"


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "data"
    entries = []
    for i, pair in enumerate(synthetic_pairs(4, 16)):
        save_image(pair.input, root / "raw" / f"{i}.png")
        save_image(pair.target, root / "gt" / f"{i}.png")
        entries.append(ManifestEntry(root / "raw" / f"{i}.png", root / "gt" / f"{i}.png", "reference"))
    return DatasetManifest(entries, root).write(root / "pairs.tsv")


@pytest.fixture
def configs(tmp_path):
    pre = tmp_path / "pre.cfg"
    pre.write_text("epochs = 2\nschedule = 0:2:16\n" + TINY)
    ft = tmp_path / "ft.cfg"
    ft.write_text("steps = 3\n" + TINY)
    return pre, ft


def error_of(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_pipeline(tmp_path, dataset, configs, capsys):
    pre_cfg, ft_cfg = configs
    pre = tmp_path / "pre"
    assert main(["pretrain", "--config", str(pre_cfg), "--manifest", str(dataset), "--out", str(pre), "--seed", "4"]) == 0
    run = json.loads((pre / "run_manifest.json").read_text())
    assert run["options"]["seed"] == "4" and "pretrain.ckpt" in run["artifacts"]
    assert (pre / "resolved.cfg").is_file() and (pre / "pretrain_log.csv").is_file()

    # rerunning from the resolved config reproduces the checkpoint exactly
    again = tmp_path / "again"
    assert main(["pretrain", "--config", str(pre / "resolved.cfg"), "--manifest", str(dataset), "--out", str(again)]) == 0
    assert json.loads((again / "run_manifest.json").read_text())["artifacts"]["pretrain.ckpt"] == run["artifacts"]["pretrain.ckpt"]

    ft = tmp_path / "ft"
    args = ["finetune", "--config", str(ft_cfg), "--manifest", str(dataset), "--checkpoint", str(pre / "pretrain.ckpt")]
    assert main(args + ["--out", str(ft), "--scorer", "proxy"]) == 0
    log = (ft / "finetune_log.csv").read_text().splitlines()
    assert log[0] == "step,pixel,perceptual,score,total,mean_q,lr" and len(log) == 4
    resolved = (ft / "resolved.cfg").read_text()
    assert "lambda3 = 0.003" in resolved and "batch_size = 2" in resolved and "lr = 1e-05" in resolved

    outs = [tmp_path / "enh1", tmp_path / "enh2"]
    for out in outs:
        assert main(["enhance", "--checkpoint", str(ft / "finetune.ckpt"), "--manifest", str(dataset), "--out", str(out)]) == 0
    for name in ("0.png", "3.png"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    ev = tmp_path / "eval"
    assert main(["evaluate", "--pred", str(outs[0]), "--target", str(outs[1]), "--out", str(ev), "--scorer", "proxy"]) == 0
    rows = read_metric_csv(ev / "metrics.csv")
    assert [v for _, m, v in rows if m == "psnr"] == [100.0] * 4
    assert {m for _, m, _ in rows} == {"psnr", "ssim", "uiqm", "uciqe", "proxy"}


def test_select_and_analyze(tmp_path, dataset):
    out = tmp_path / "sel"
    assert main(["select-metric", "--manifest", str(dataset), "--out", str(out), "--metrics", "uiqm", "proxy"]) == 0
    lines = (out / "selection.csv").read_text().splitlines()
    assert lines[0] == "metric,monotonicity,plcc,rank" and len(lines) == 3

    dom = tmp_path / "dom"
    assert main(["analyze-domain", "--manifest", str(dataset), "--out", str(dom), "--extractor", "identity"]) == 0
    report = json.loads((dom / "domain_report.json").read_text())
    assert report["delta_domain"] > 0 and "mu_R" not in report
    assert json.loads((dom / "run_manifest.json").read_text())["options"]["derived_seeds"]


def test_unknown_config_key_fails_fast(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochz = 3\n")
    assert main(["pretrain", "--config", str(bad), "--manifest", str(dataset), "--out", str(tmp_path / "o")]) == 1
    err = error_of(capsys)
    assert err["error"] == "ConfigError" and "epochz" in err["message"]
    assert not (tmp_path / "o" / "pretrain.ckpt").exists()


def test_missing_inputs(tmp_path, capsys):
    assert main(["pretrain", "--manifest", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "o")]) == 1
    assert error_of(capsys)["error"] == "LoadError"
    assert main(["evaluate", "--pred", str(tmp_path / "none"), "--out", str(tmp_path / "e")]) == 1
    assert error_of(capsys)["error"] == "LoadError"


def test_conflicting_flags(tmp_path, dataset, capsys):
    ck = tmp_path / "c.ckpt"
    ck.write_bytes(b"x")
    code = main(["enhance", "--checkpoint", str(ck), "--manifest", str(dataset), "--input", str(tmp_path), "--out", str(tmp_path / "o")])
    assert code == 1 and error_of(capsys)["error"] == "ConfigError"
    code = main(["evaluate", "--pred", str(tmp_path), "--resize-full-reference", "--out", str(tmp_path / "e")])
    assert code == 1 and error_of(capsys)["error"] == "ConfigError"


def test_external_scorer_needs_entry(tmp_path, dataset, configs, capsys):
    _, ft_cfg = configs
    ck = tmp_path / "c.ckpt"
    ck.write_bytes(b"x")
    args = ["finetune", "--config", str(ft_cfg), "--manifest", str(dataset), "--checkpoint", str(ck)]
    assert main(args + ["--scorer", "external", "--out", str(tmp_path / "o")]) == 1
    assert error_of(capsys)["error"] == "ConfigError"
