"""Acceptance gate: one test per criterion, each reported as PASS/FAIL.

Run ``pytest tests/test_acceptance.py -v``; the verdict table is printed in
the terminal summary.
"""

import math
import time

import numpy as np
import torch

from acceptance_log import criterion
from oracles import (
    plcc_oracle,
    psnr_oracle,
    ssim_oracle,
    uciqe_components_oracle,
    uciqe_oracle,
    uiconm_oracle,
    uicm_oracle,
    uiqm_oracle,
    uism_oracle,
)
from synth import grad_rel_error, smooth_image, synthetic_pairs, underwater
from uwenhance.checkpoint import from_bytes, to_bytes
from uwenhance.config import FinetuneConfig, PretrainConfig, Stage, load_config, packaged_config
from uwenhance.domain import domain_discrepancy, feature_shift
from uwenhance.iqa import ProxyScorer, plcc, psnr, ssim, uciqe, uiqm
from uwenhance.iqa.underwater import uciqe_components, uiconm, uicm, uism
from uwenhance.losses import (
    IdentityExtractor,
    LossWeights,
    RandomConvPyramid,
    pearson_corr,
    pearson_loss,
    perceptual_loss,
    pixel_loss,
    total_loss,
)
from uwenhance.metric_select import monotonicity_rate
from uwenhance.network import NetworkConfig, enhance, init_network, parameter_digest, pixel_shuffle, pixel_unshuffle
from uwenhance.training import (
    finetune,
    generate_pseudo_labels,
    mean_quality,
    pretrain,
    trailing_mean,
    trainset_psnr,
)

TINY = NetworkConfig(base_channels=8)


def two_pass_pearson(a, b):
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    ma, mb = sum(a) / a.size, sum(b) / b.size
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    return sab / math.sqrt(saa * sbb)


def test_c01_loss_oracles():
    with criterion(1, "loss-oracle equivalence") as notes:
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst_rho = worst_loss = worst_pix = 0.0
        for _ in range(100):
            a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
            rho = two_pass_pearson(a, b)
            worst_rho = max(worst_rho, abs(float(pearson_corr(a, b)[0]) - rho))
            worst_loss = max(worst_loss, abs(float(pearson_loss(a, b)) - (1 - rho) / 2))
            mae = sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size
            worst_pix = max(worst_pix, abs(float(pixel_loss(a, b)) - mae))
        elapsed = time.perf_counter() - start
        notes.append(f"rho err {worst_rho:.1e}, L_cor err {worst_loss:.1e}, L_pix err {worst_pix:.1e}")
        assert worst_rho < 1e-6 and worst_loss < 1e-6
        assert worst_pix < 1e-7
        assert elapsed < 5.0


def test_c02_gradients():
    with criterion(2, "analytic vs finite-difference gradients") as notes:
        start = time.perf_counter()
        ext = RandomConvPyramid().double()
        scorer = ProxyScorer()
        weights = LossWeights(1.0, 0.5, 0.003)
        worst = {}
        for trial in range(20):
            gen = torch.Generator().manual_seed(trial)
            x = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64)
            target = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64)
            q_ref = torch.tensor([30.0], dtype=torch.float64)
            fns = {
                "pixel": lambda p: pixel_loss(p, target),
                "pearson": lambda p: pearson_loss(p, target),
                "perceptual": lambda p: perceptual_loss(p, target, ext),
                "proxy_score": lambda p: scorer(p).sum(),
                "total": lambda p: total_loss(p, target, scorer(p), q_ref, weights, ext).total,
            }
            for name, fn in fns.items():
                worst[name] = max(worst.get(name, 0.0), grad_rel_error(fn, x, h=1e-4))
        elapsed = time.perf_counter() - start
        notes.append(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
        assert all(v < 1e-3 for v in worst.values())
        assert elapsed < 120.0


def test_c03_pearson_invariances():
    with criterion(3, "Pearson invariances") as notes:
        rng = np.random.default_rng(3)
        img = rng.random((16, 16, 3))
        self_loss = float(pearson_loss(img, img))
        affine = []
        for _ in range(10):
            a, b = rng.uniform(0.1, 5.0), rng.uniform(-2.0, 2.0)
            affine.append(float(pearson_loss(img, a * img + b)))
        neg = float(pearson_loss(img, 1.0 - img))
        notes.append(f"self {self_loss:.1e}, affine max {max(affine):.1e}, negated {neg:.9f}")
        assert self_loss < 1e-7
        assert max(affine) < 1e-6
        assert abs(neg - 1.0) < 1e-6


def test_c04_frozen_scorer():
    with criterion(4, "frozen scorer, trainable network changes") as notes:
        start = time.perf_counter()
        model = init_network(TINY, seed=4)
        scorer = ProxyScorer()
        inputs = [p.input for p in synthetic_pairs(16, 16, seed=4)]
        records = generate_pseudo_labels(inputs, model, scorer)
        digest = scorer.digest()
        ckpt = finetune(records, model, scorer, FinetuneConfig(steps=50, network=TINY))
        changed = total = 0
        for (name, a), (_, b) in zip(model.named_parameters(), ckpt.model.named_parameters()):
            if a.requires_grad:
                changed += int((a != b).sum())
                total += a.numel()
        frac = changed / total
        notes.append(f"{changed}/{total} trainable scalars changed ({frac:.4f}); {ckpt.step} steps")
        assert scorer.digest() == digest
        assert ckpt.step == 50
        assert frac >= 0.99
        assert time.perf_counter() - start < 300


def test_c05_term_isolation():
    with criterion(5, "objective term isolation") as notes:
        model = init_network(TINY, seed=5)
        scorer = ProxyScorer()
        records = generate_pseudo_labels([p.input for p in synthetic_pairs(6, 16, seed=5)], model, scorer)
        no_score = finetune(records, model, scorer, FinetuneConfig(steps=10, lambda3=0.0, network=TINY))
        assert all(row["score"] == 0.0 for row in no_score.log)
        pixel_only = finetune(records, model, scorer, FinetuneConfig(steps=10, lambda1=0.7, lambda2=0.0, lambda3=0.0, network=TINY))
        gap = max(abs(row["total"] - 0.7 * row["pixel"]) for row in pixel_only.log)
        notes.append(f"score terms all 0.0; max |total - l1*pixel| = {gap:.1e}")
        assert gap < 1e-6


def test_c06_transfer_effect():
    with criterion(6, "fine-tuning raises mean Q; trailing mean non-decreasing") as notes:
        start = time.perf_counter()
        pairs = synthetic_pairs(32, 16, seed=6)
        pre_cfg = PretrainConfig(epochs=40, lr=1e-3, schedule=[Stage(0, 8, 0)], augment=False, network=TINY)
        pre = pretrain(pairs, pre_cfg)
        scorer = ProxyScorer()
        inputs = [p.input for p in pairs]
        records = generate_pseudo_labels(inputs, pre, scorer)
        q_pre = mean_quality(pre.model, inputs, scorer)
        # full-batch steps, so the batch mean Q is the set mean Q
        ft_cfg = FinetuneConfig(steps=200, batch_size=32, lr=1e-4, lr_min=0.0, augment=False, network=TINY)
        ft = finetune(records, pre, scorer, ft_cfg)
        q_ft = mean_quality(ft.model, inputs, scorer)
        window = trailing_mean([row["mean_q"] for row in ft.log], ft_cfg.stop_window)
        tail = window[-(len(window) // 4) :]
        steps_down = int(np.sum(np.diff(tail) < 0))
        elapsed = time.perf_counter() - start
        notes.append(f"mean Q {q_pre:.2f} -> {q_ft:.2f}; last-quarter decreases: {steps_down}")
        assert q_ft - q_pre > 0
        assert steps_down == 0
        assert elapsed < 600


def test_c07_overfit():
    with criterion(7, "overfit sanity and Pearson ablation") as notes:
        start = time.perf_counter()
        pairs = synthetic_pairs(8, 32, seed=7)
        results = {}
        for label, weight in (("pix+cor", 1.0), ("pix", 0.0)):
            cfg = PretrainConfig(
                epochs=500, lr=1e-3, schedule=[Stage(0, 8, 0)], augment=False, pearson_weight=weight, network=TINY
            )
            ckpt = pretrain(pairs, cfg)
            assert ckpt.step <= 500
            results[label] = trainset_psnr(ckpt.model, pairs)
        notes.append(", ".join(f"{k} {v:.2f} dB" for k, v in results.items()))
        assert max(results.values()) >= 30.0
        assert results["pix+cor"] >= 30.0
        assert results["pix+cor"] >= results["pix"] - 1.0
        assert time.perf_counter() - start < 600


def test_c08_metric_selection():
    with criterion(8, "metric-selection harness") as notes:
        rng = np.random.default_rng(8)
        pairs = []
        for _ in range(20):
            clean = smooth_image(rng, 16)
            pairs.append((clean, underwater(clean)))

        def mse(img, clean):
            return float(np.mean((np.asarray(img, np.float64) - clean) ** 2))

        good = monotonicity_rate(lambda img, c: -mse(img, c), pairs, with_reference=True)
        bad = monotonicity_rate(mse, pairs, with_reference=True)
        scorer = ProxyScorer()
        # swapping half the pairs gives a metric with a mixed pass rate to transform
        mixed = [(d, c) if i % 2 else (c, d) for i, (c, d) in enumerate(pairs)]
        base = monotonicity_rate(scorer.score, mixed)
        transforms = {
            "exp": lambda s: math.exp(s / 10.0),
            "cube": lambda s: s**3,
            "affine": lambda s: 3.0 * s - 7.0,
        }
        transformed = {k: monotonicity_rate(lambda img, t=t: t(scorer.score(img)), mixed) for k, t in transforms.items()}
        notes.append(f"-MSE {good}, +MSE {bad}, proxy {base}, transformed {transformed}")
        assert good == 1.0 and bad == 0.0
        assert 0.0 < base < 1.0
        assert all(v == base for v in transformed.values())


def test_c09_metric_correctness():
    with criterion(9, "metric correctness against oracles") as notes:
        rng = np.random.default_rng(9)
        psnr_err = ssim_err = 0.0
        for _ in range(10):
            a = smooth_image(rng, 32)
            b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
            psnr_err = max(psnr_err, abs(psnr(a, b) - psnr_oracle(a, b)))
            ssim_err = max(ssim_err, abs(ssim(a, b) - ssim_oracle(a, b)))
        x, y = list(rng.random(50)), list(rng.random(50))
        plcc_err = abs(plcc(x, y) - plcc_oracle(x, y))
        constants = [uiqm(np.full((32, 32, 3), v)) for v in (0.0, 0.5, 1.0)]
        constants += [uciqe(np.full((32, 32, 3), v)) for v in (0.0, 0.5, 1.0)]
        uiqm_err = uciqe_err = 0.0
        for i in range(20):
            img = smooth_image(rng, 32) if i % 2 else rng.random((32, 32, 3))
            uiqm_err = max(
                uiqm_err,
                abs(uicm(img) - uicm_oracle(img)),
                abs(uism(img) - uism_oracle(img)),
                abs(uiconm(img) - uiconm_oracle(img)),
                abs(uiqm(img) - uiqm_oracle(img)),
            )
            comps = np.abs(np.array(uciqe_components(img)) - uciqe_components_oracle(img)).max()
            uciqe_err = max(uciqe_err, comps, abs(uciqe(img) - uciqe_oracle(img)))
        notes.append(
            f"psnr {psnr_err:.1e} dB, ssim {ssim_err:.1e}, plcc {plcc_err:.1e}, "
            f"uiqm {uiqm_err:.1e}, uciqe {uciqe_err:.1e}, constants {set(constants)}"
        )
        assert psnr_err < 1e-4 and ssim_err < 1e-3 and plcc_err < 1e-9
        assert all(v == 0.0 for v in constants)
        assert uiqm_err < 1e-2 and uciqe_err < 1e-3


def test_c10_architecture():
    with criterion(10, "architecture invariants") as notes:
        rng = np.random.default_rng(10)
        for _ in range(200):
            b, c = int(rng.integers(1, 4)), int(rng.integers(1, 9))
            h, w = 2 * int(rng.integers(1, 17)), 2 * int(rng.integers(1, 17))
            x = torch.randn(b, c, h, w)
            assert torch.equal(pixel_shuffle(pixel_unshuffle(x, 2), 2), x)
        model = init_network(NetworkConfig(), seed=10)
        worst_lo, worst_hi = 1.0, 0.0
        for size in (64, 128):
            for kind in ("uniform", "binary", "smooth"):
                if kind == "uniform":
                    img = rng.random((size, size, 3))
                elif kind == "binary":
                    img = rng.integers(0, 2, (size, size, 3)).astype(np.float64)
                else:
                    img = smooth_image(rng, size)
                out = enhance(model, img.astype(np.float32))
                assert out.shape == img.shape
                worst_lo, worst_hi = min(worst_lo, out.min()), max(worst_hi, out.max())
        row_err = 0.0
        with torch.no_grad():
            x = torch.rand(2, 3, 32, 32)
            feats = model.patch_embed(x)
            for attn in model.attention_modules()[:1]:
                wts = attn.attention_weights(feats)
                row_err = float((wts.sum(-1) - 1).abs().max())
            for block in model.encoders[0]:
                wts = block.attn.attention_weights(block.norm(feats))
                row_err = max(row_err, float((wts.sum(-1) - 1).abs().max()))
        notes.append(f"200 roundtrips exact; output range [{worst_lo:.3f}, {worst_hi:.3f}]; attention row err {row_err:.1e}")
        assert worst_lo >= 0.0 and worst_hi <= 1.0
        assert row_err < 1e-5


def test_c11_determinism_and_resume():
    with criterion(11, "determinism and checkpoint resume") as notes:
        pairs = synthetic_pairs(6, 32, seed=11)
        cfg = PretrainConfig(epochs=4, schedule=[Stage(0, 3, 16), Stage(2, 2, 24)], seed=11, network=TINY)
        a, b = pretrain(pairs, cfg), pretrain(pairs, cfg)
        assert a.log == b.log
        assert parameter_digest(a.model) == parameter_digest(b.model)

        scorer = ProxyScorer()
        records = generate_pseudo_labels([p.input for p in pairs], a, scorer)
        ft_cfg = FinetuneConfig(steps=10, seed=11, patch_size=16, network=TINY)
        f1, f2 = finetune(records, a, scorer, ft_cfg), finetune(records, a, scorer, ft_cfg)
        assert f1.log == f2.log and parameter_digest(f1.model) == parameter_digest(f2.model)

        # interrupt after 5 steps, roundtrip through bytes, resume for 5 more
        head = pretrain(pairs, cfg, stop_after=5)
        resumed = pretrain(pairs, cfg, resume=from_bytes(to_bytes(head)), stop_after=10)
        pre_gap = max(abs(x["total"] - y["total"]) for x, y in zip(a.log[5:10], resumed.log))
        ft_head = finetune(records, a, scorer, ft_cfg, stop_after=5)
        ft_rest = finetune(records, from_bytes(to_bytes(ft_head)), scorer, ft_cfg)
        ft_gap = max(abs(x["total"] - y["total"]) for x, y in zip(f1.log[5:], ft_rest.log))
        notes.append(f"resume gaps: pretrain {pre_gap:.1e}, finetune {ft_gap:.1e}")
        assert len(resumed.log) == 5 and len(ft_rest.log) == 5
        assert pre_gap <= 1e-6 and ft_gap <= 1e-6


def test_c12_domain_diagnostics():
    with criterion(12, "domain diagnostics") as notes:
        rng = np.random.default_rng(12)
        clean = [0.1 + 0.8 * rng.random((8, 8, 3)) for _ in range(6)]
        zero = domain_discrepancy(clean, clean)
        offset = domain_discrepancy([c + 0.1 for c in clean], clean)
        delta = 0.07
        shift = feature_shift([c + delta for c in clean], clean, IdentityExtractor()).delta_feat
        expected = 3 * 8 * 8 * delta**2
        notes.append(f"identical {zero}, offset {offset:.12f}, shift {shift:.9f} vs {expected:.9f}")
        assert zero == 0.0
        assert abs(offset - 0.01) < 1e-9
        assert abs(shift - expected) < 1e-6


def test_c13_full_configs():
    with criterion(13, "shipped full-scale configs") as notes:
        pre = load_config(PretrainConfig, packaged_config("pretrain_full"))
        ft = load_config(FinetuneConfig, packaged_config("finetune_full"))
        notes.append(
            f"pretrain lr {pre.lr} epochs {pre.epochs} train {pre.train_lsui_pairs}+{pre.train_uieb_pairs}; "
            f"finetune lr {ft.lr} steps {ft.steps} batch {ft.batch_size} l3 {ft.lambda3} "
            f"split {ft.finetune_ruie}/{ft.finetune_euvp}/{ft.finetune_lsui}"
        )
        assert pre.lr == 3e-4 and pre.epochs == 380
        assert (pre.train_lsui_pairs, pre.train_uieb_pairs) == (3879, 800)
        assert (pre.test_lsui_pairs, pre.test_uieb_pairs) == (400, 90)
        assert ft.lr == 1e-5 and ft.steps == 1000 and ft.batch_size == 2 and ft.lambda3 == 0.003
        assert (ft.finetune_ruie, ft.finetune_euvp, ft.finetune_lsui) == (3830, 3870, 2300)
