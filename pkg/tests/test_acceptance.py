"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime. Run with `pytest tests/test_acceptance.py -s`
to watch the lines stream; the stated runtime budgets are asserted.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from conftest import central_diff_check, grad_check_params, make_clip, synthetic_face
from portraitgen import io
from portraitgen.audio import LogMelExtractor, Waveform, save_wav
from portraitgen.config import OptimizerConfig, PipelineConfig
from portraitgen.face_composer import FacoConfig, FaCoNet, PointDiscriminator
from portraitgen.face_composer import train_step as faco_train_step
from portraitgen.geometry import CameraModel
from portraitgen.metrics import diversity, tcm, zero_flow
from portraitgen.motion_net import (
    STREAM_SHAPES,
    BiasedCausalSelfAttention,
    ModaConfig,
    ModaNet,
    MotionOutput,
    ProbabilisticAttention,
    SpecificAttention,
    VaeMoments,
    alignment_bias,
    causal_bias,
    loss_kld,
    loss_total,
    loss_tp,
)
from portraitgen.pipeline import _renderer_records, infer, sliding_windows, train
from portraitgen.preprocess import (
    SegmentationMap,
    build_dataset,
    extract_torso_points,
    polygon_fit,
    semantic_boundary,
)
from portraitgen.renderer import (
    MultiScaleDiscriminator,
    RandomConvPerceptual,
    RendererConfig,
    UNetGenerator,
    loss_disc_multiscale,
    renderer_losses,
    tpe,
)
from portraitgen.metrics import psnr
from portraitgen.template import eye_indices, mouth_indices


@contextmanager
def criterion(num, name, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"[criterion {num:2d}] {name:<26} FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    verdict = "PASS" if elapsed < budget_seconds else "FAIL (over budget)"
    print(f"[criterion {num:2d}] {name:<26} {verdict} ({elapsed:.1f}s, budget {budget_seconds:.0f}s)")
    assert elapsed < budget_seconds, f"{name} exceeded its {budget_seconds}s budget"


def test_criterion_1_mask_correctness():
    with criterion(1, "mask correctness", 1.0):
        for t in range(1, 17):
            a_bias = alignment_bias(t).numpy()
            expected_a = np.full((t, t), -np.inf)
            np.fill_diagonal(expected_a, 0.0)
            assert np.array_equal(a_bias, expected_a)
            for q in (0.25, 0.5, 1.0, 1.7):
                c_bias = causal_bias(t, q).numpy()
                expected_c = np.full((t, t), -np.inf)
                for i in range(t):
                    for j in range(i + 1):
                        expected_c[i, j] = math.floor((i - j) * q)
                assert np.array_equal(c_bias, expected_c)
        rng = np.random.default_rng(0)
        for t in (1, 4, 16):
            scores = torch.as_tensor(rng.normal(size=(t, t)))
            probs = torch.softmax(scores + alignment_bias(t, dtype=torch.float64), dim=-1)
            assert torch.equal(probs, torch.eye(t, dtype=torch.float64)) or torch.allclose(
                probs, torch.eye(t, dtype=torch.float64)
            )


def test_criterion_2_causality():
    with criterion(2, "causality", 10.0):
        torch.manual_seed(0)
        attn = BiasedCausalSelfAttention(d=16, q=0.5, period=5)
        rng = np.random.default_rng(1)
        for _ in range(100):
            t = int(rng.integers(2, 14))
            cut = int(rng.integers(1, t))
            s = torch.as_tensor(rng.normal(size=(t, 16)), dtype=torch.float32)
            perturbed = s.clone()
            perturbed[cut:] = torch.as_tensor(rng.normal(size=(t - cut, 16)), dtype=torch.float32)
            with torch.no_grad():
                assert torch.equal(attn(s)[:cut], attn(perturbed)[:cut])


def test_criterion_3_kld():
    with criterion(3, "KL divergence", 5.0):
        assert float(loss_kld(VaeMoments(torch.zeros(8), torch.zeros(8)))) == 0.0
        rng = np.random.default_rng(2)
        for _ in range(1000):
            d_l = int(rng.integers(1, 16))
            mu = rng.normal(size=d_l)
            log_sigma = rng.uniform(-3.0, 3.0, size=d_l)
            oracle = 0.5 * np.sum(mu**2 + np.exp(log_sigma) - log_sigma - 1.0) / d_l
            got = float(loss_kld(VaeMoments(torch.as_tensor(mu), torch.as_tensor(log_sigma))))
            assert abs(got - oracle) < 1e-6


def test_criterion_4_gradient_suite():
    with criterion(4, "gradient suite", 120.0):
        torch.manual_seed(0)
        cfg = ModaConfig(audio_dim=6, d=8, d_l=4, q=0.5, ppe_period=4)
        net = ModaNet(cfg).double()
        rng = np.random.default_rng(0)
        feats = torch.as_tensor(rng.normal(size=(4, 6))).requires_grad_()
        face = torch.as_tensor(synthetic_face())

        # MODA encoders
        central_diff_check(lambda: net.encode_audio(feats).sum(), [feats], max_coords=8)
        grad_check_params(net.audio_encoder, lambda: net.encode_audio(feats).pow(2).sum(), max_params=2, max_coords=8)
        grad_check_params(net.subject_encoder, lambda: net.encode_subject(face).pow(2).sum(), max_params=2, max_coords=8)

        # attention blocks
        attn = BiasedCausalSelfAttention(d=8, q=0.5, period=4).double()
        s = torch.randn(4, 8, dtype=torch.float64).requires_grad_()
        central_diff_check(lambda: attn(s).pow(2).sum(), [s], max_coords=8)
        grad_check_params(attn, lambda: attn(s).pow(2).sum(), max_params=2, max_coords=8)

        spec = SpecificAttention(d=8, q=0.5, period=4).double()
        s_a = torch.randn(4, 8, dtype=torch.float64).requires_grad_()
        grad_check_params(spec, lambda: spec(s_a, s).pow(2).sum(), max_params=2, max_coords=8)

        prob = ProbabilisticAttention(d=8, d_l=4).double()

        def prob_fn():
            out, m = prob(s, mode="train", generator=torch.Generator().manual_seed(3))
            return out.pow(2).sum() + loss_kld(m)

        central_diff_check(prob_fn, [s], max_coords=8)
        grad_check_params(prob, prob_fn, max_params=2, max_coords=8)

        # decoder tails through the task loss
        gt = MotionOutput.from_arrays(
            {n: rng.normal(size=(4, *sh)) for n, sh in STREAM_SHAPES.items()}, dtype=torch.float64
        )

        def tail_fn():
            out = net(feats, face, mode="train", seed=11)
            return loss_tp(out.motion, gt, cfg.lambdas)

        grad_check_params(net.tails["mouth"], tail_fn, max_params=2, max_coords=8)

        # facial composer + its discriminator
        faco = FaCoNet(FacoConfig(d=16)).double()
        disc = PointDiscriminator(d=16).double()
        subject = torch.as_tensor(synthetic_face())
        mouth = torch.as_tensor(rng.normal(size=(40, 3))).requires_grad_()
        eye = torch.as_tensor(rng.normal(size=(60, 3)))
        gt_face = torch.as_tensor(rng.normal(size=(478, 3)))

        def faco_fn():
            pred = faco(subject, mouth, eye)
            from portraitgen.face_composer import loss_gen

            return loss_gen(disc(pred), pred, gt_face, l1_weight=10.0)

        central_diff_check(faco_fn, [mouth], max_coords=8)
        grad_check_params(faco, faco_fn, max_params=2, max_coords=8)
        grad_check_params(disc, faco_fn, max_params=2, max_coords=8)

        # renderer losses
        rcfg = RendererConfig(resolution=64, enc_channels=(4, 4, 4, 4, 4, 4), disc_base_channels=4, disc_scales=2)
        rdisc = MultiScaleDiscriminator(rcfg, cond_channels=2).double()
        perceptual = RandomConvPerceptual(seed=0).double()
        pred = torch.as_tensor(rng.uniform(-0.5, 0.5, (1, 3, 64, 64))).requires_grad_()
        target = torch.as_tensor(rng.uniform(-0.5, 0.5, (1, 3, 64, 64)))
        cond = torch.as_tensor(rng.uniform(-1, 1, (1, 2, 64, 64)))
        mask = torch.ones(1, 1, 64, 64, dtype=torch.float64)

        def render_fn():
            scores, fake_feats = rdisc(pred, cond)
            with torch.no_grad():
                _, real_feats = rdisc(target, cond)
            return renderer_losses(pred, target, mask, scores, fake_feats, real_feats, rcfg, perceptual)["total"]

        central_diff_check(render_fn, [pred], max_coords=6)


OVERFIT_BUDGET_SECONDS = 900.0  # the three training checks combined
_overfit_elapsed: dict = {}


@contextmanager
def _timed_part(name):
    start = time.perf_counter()
    yield
    _overfit_elapsed[name] = time.perf_counter() - start
    if len(_overfit_elapsed) == 3:
        total = sum(_overfit_elapsed.values())
        print(f"[criterion  5] combined training time   {total:.1f}s (budget {OVERFIT_BUDGET_SECONDS:.0f}s)")
        assert total < OVERFIT_BUDGET_SECONDS


class TestCriterion5Overfit:
    def test_a_moda_training(self):
        with criterion(5, "overfit: motion net", 600.0), _timed_part("moda"):
            torch.manual_seed(0)
            t_frames = 50
            cfg = ModaConfig(audio_dim=26, d=64, d_l=16, q=0.04)
            net = ModaNet(cfg)
            rng = np.random.default_rng(0)
            feats = rng.normal(size=(t_frames, 26))
            face = synthetic_face()
            tt = np.arange(t_frames)[:, None]
            targets = {}
            for name, shape in STREAM_SHAPES.items():
                k = int(np.prod(shape))
                freqs = rng.uniform(0.5, 3.0, size=k)
                phases = rng.uniform(0, 2 * np.pi, size=k)
                targets[name] = (0.2 * np.sin(2 * np.pi * freqs * tt / t_frames + phases)).reshape(t_frames, *shape)
            gt = MotionOutput.from_arrays(targets)
            opt = torch.optim.Adam(net.parameters(), lr=1e-3, betas=(0.9, 0.99))
            best = np.inf
            for step in range(2000):
                out = net(feats, face, mode="train")
                tp = loss_tp(out.motion, gt, cfg.lambdas)
                loss = tp + loss_kld(out.moments)
                opt.zero_grad()
                loss.backward()
                opt.step()
                best = min(best, float(tp.detach()))
                if best < 1e-2:
                    break
            assert best < 1e-2, f"training L_TP bottomed out at {best:.4f}"

    def test_b_faco_training(self):
        with criterion(5, "overfit: face composer", 120.0), _timed_part("faco"):
            torch.manual_seed(0)
            rng = np.random.default_rng(0)
            base = synthetic_face()
            n = 10
            latents = rng.normal(size=(n, 4))
            basis = rng.normal(scale=0.05, size=(4, 478, 3))
            faces = base[None] + np.einsum("nk,kpd->npd", latents, basis)
            batch = {
                "subject": torch.as_tensor(np.broadcast_to(base, (n, 478, 3)).copy(), dtype=torch.float32),
                "mouth": torch.as_tensor(faces[:, mouth_indices()], dtype=torch.float32),
                "eye": torch.as_tensor(faces[:, eye_indices()], dtype=torch.float32),
                "face": torch.as_tensor(faces, dtype=torch.float32),
            }
            cfg = FacoConfig(d=128)
            net, disc = FaCoNet(cfg), PointDiscriminator(cfg.d)
            gopt = torch.optim.Adam(net.parameters(), lr=2e-3, betas=(0.9, 0.99))
            dopt = torch.optim.Adam(disc.parameters(), lr=2e-3, betas=(0.9, 0.99))
            best = np.inf
            for step in range(500):
                faco_train_step(batch, net, disc, gopt, dopt)
                with torch.no_grad():
                    err = float(torch.mean(torch.abs(net(batch["subject"], batch["mouth"], batch["eye"]) - batch["face"])))
                best = min(best, err)
                if best < 1e-2:
                    break
            assert best < 1e-2, f"mean point error bottomed out at {best:.4f}"

    def test_c_renderer_training(self, tmp_path):
        with criterion(5, "overfit: renderer", 600.0), _timed_part("renderer"):
            from portraitgen.preprocess import process_clip

            clip = tmp_path / "clip"
            cam = make_clip(clip, n_frames=20, size=64, seed=0)
            rcfg = RendererConfig(resolution=64, enc_channels=(16, 32, 64, 64, 64, 64), disc_base_channels=16, disc_scales=2)
            cfg = PipelineConfig(
                window=30,
                stride=15,
                epochs=(1, 1, 1),
                batch_sizes=(1, 8, 4),
                optimizer=OptimizerConfig(lr=2e-3),
                moda=ModaConfig(audio_dim=20, d=16, d_l=4),
                faco=FacoConfig(d=16),
                renderer=rcfg,
                camera=cam,
            )
            data = process_clip(clip, fps=25.0, extractor=LogMelExtractor(n_mels=20), camera=cam, seed=0)
            torch.manual_seed(0)
            packs = [_renderer_records([data], cfg, split) for split in ("train", "val")]
            conds = torch.cat([p[0] for p in packs])
            targets = torch.cat([p[1] for p in packs])
            masks = torch.cat([p[2] for p in packs])

            gen = UNetGenerator(rcfg)
            disc = MultiScaleDiscriminator(rcfg)
            perceptual = RandomConvPerceptual()
            gopt = torch.optim.Adam(gen.parameters(), lr=2e-3, betas=(0.9, 0.99))
            dopt = torch.optim.Adam(disc.parameters(), lr=2e-3, betas=(0.9, 0.99))
            rng = np.random.default_rng(0)
            n = conds.shape[0]
            value = 0.0
            for epoch in range(240):
                order = rng.permutation(n)
                for lo in range(0, n, 4):
                    sel = order[lo : lo + 4]
                    cond, target, mask = conds[sel], targets[sel], masks[sel]
                    fake = gen(cond)
                    dopt.zero_grad()
                    real_scores, _ = disc(target, cond)
                    fake_scores, _ = disc(fake.detach(), cond)
                    loss_disc_multiscale(real_scores, fake_scores).backward()
                    dopt.step()
                    gopt.zero_grad()
                    fake_scores, fake_feats = disc(fake, cond)
                    with torch.no_grad():
                        _, real_feats = disc(target, cond)
                    renderer_losses(fake, target, mask, fake_scores, fake_feats, real_feats, rcfg, perceptual)["total"].backward()
                    gopt.step()
                if epoch % 5 == 4:
                    with torch.no_grad():
                        pred = gen(conds)
                    value = psnr(((pred + 1) / 2).numpy(), ((targets + 1) / 2).numpy())
                    if value > 30.5:
                        break
            assert value > 30.0, f"overfit PSNR reached only {value:.2f} dB"


def test_criterion_6_diversity_ablation():
    with criterion(6, "diversity ablation", 120.0):
        torch.manual_seed(0)
        cfg = ModaConfig(audio_dim=10, d=32, d_l=8, q=0.04)
        net = ModaNet(cfg)
        feats = np.random.default_rng(0).normal(size=(12, 10))
        face = synthetic_face()
        with torch.no_grad():
            sampled = np.stack(
                [net(feats, face, mode="sample", seed=s).motion.numpy()["pose"][:, None, :3] for s in range(16)]
            )
            ablated = np.stack(
                [net(feats, face, mode="mean", seed=s).motion.numpy()["pose"][:, None, :3] for s in range(16)]
            )
        assert diversity(sampled) > 0
        assert diversity(ablated) == 0.0


def test_criterion_7_tcm():
    with criterion(7, "temporal consistency", 5.0):
        rng = np.random.default_rng(0)
        video = rng.uniform(size=(5, 8, 8))
        flows = np.stack([zero_flow(8, 8)] * 4)
        assert abs(tcm(video, video.copy(), flows, flows) - 1.0) <= 1e-6

        ref = np.array([[[1.0, 2.0], [3.0, 4.0]], [[2.0, 3.0], [4.0, 5.0]]])
        gen = np.array([[[0.0, 0.0], [0.0, 0.0]], [[2.0, 0.0], [0.0, 0.0]]])
        ref_flow = np.zeros((1, 2, 2, 2))
        ref_flow[0, ..., 0] = 1.0
        gen_flow = np.zeros((1, 2, 2, 2))
        # warp(ref0) with +1 x-flow = [[2,2],[4,4]] -> residual energy 2;
        # generated residual energy 4; score = exp(1 - (2+eps)/(4+eps))
        expected = math.exp(1.0 - (2.0 + 1e-8) / (4.0 + 1e-8))
        assert abs(tcm(ref, gen, ref_flow, gen_flow) - expected) <= 1e-6


def test_criterion_8_torso_extraction():
    with criterion(8, "torso extraction", 30.0):
        from test_preprocess import brute_force_boundary, symmetric_shoulder_mask

        for size, top in ((64, 40), (96, 60)):
            labels = symmetric_shoulder_mask(size=size, top=top)
            torso = extract_torso_points(SegmentationMap(labels=labels), face_depth=3.0)
            assert torso.points.shape == (18, 3)
            assert np.all(torso.points[:, 2] == 3.0)
            cx = (size - 1) / 2.0
            left, right = torso.left, torso.right
            assert len(left) == 9 and len(right) == 9
            mirrored = left.copy()
            mirrored[:, 0] = 2 * cx - mirrored[:, 0]
            cost = np.linalg.norm(mirrored[:, None, :2] - right[None, :, :2], axis=2)
            assert np.all(cost.min(axis=1) <= 2.0)

        rng = np.random.default_rng(0)
        for _ in range(15):
            labels = rng.integers(0, 4, size=(64, 64))
            if not (labels == 3).any():
                labels[5, 5] = 3
            seg = SegmentationMap(labels=labels)
            assert np.array_equal(semantic_boundary(seg), brute_force_boundary(labels))

        for _ in range(15):
            n = int(rng.integers(3, 60))
            pts = np.cumsum(rng.normal(size=(n, 2)), axis=0)
            eps = float(rng.uniform(0.2, 2.5))
            simplified = polygon_fit(pts, eps)
            for p in pts:
                dmin = min(
                    np.linalg.norm(p - (a + np.clip((p - a) @ (b - a) / max((b - a) @ (b - a), 1e-12), 0, 1) * (b - a)))
                    for a, b in zip(simplified[:-1], simplified[1:])
                )
                assert dmin <= eps + 1e-9


def test_criterion_9_tpe():
    with criterion(9, "temporal encoding", 1.0):
        assert np.array_equal(tpe(0).values, np.array([0.0, 1.0] * 6))
        assert tpe(123).values.shape == (12,)
        for t in (0, 1, 7, 99, 10_000, 1_000_000):
            assert np.all(np.abs(tpe(t).values) <= 1.0)


class TestCriterion10PipelineDeterminism:
    def test_end_to_end(self, tmp_path):
        with criterion(10, "pipeline determinism", 300.0):
            data = tmp_path / "data"
            cam = make_clip(data / "clip", n_frames=12, size=64, seed=0)
            cfg = PipelineConfig(
                seed=0,
                window=30,
                stride=15,
                epochs=(2, 2, 1),
                batch_sizes=(1, 8, 4),
                optimizer=OptimizerConfig(lr=1e-3),
                moda=ModaConfig(audio_dim=10, d=16, d_l=4, q=0.04),
                faco=FacoConfig(d=16),
                renderer=RendererConfig(resolution=64, enc_channels=(8, 8, 8, 8, 8, 8), disc_base_channels=8, disc_scales=2),
                camera=cam,
            )
            build_dataset(data, fps=cfg.fps, extractor=LogMelExtractor(n_mels=10), camera=cam, seed=0)
            ckpt = tmp_path / "ckpt"
            for stage in ("moda", "faco", "renderer"):
                train(stage, data, cfg, ckpt)

            # 2 seconds of audio -> 50 frames
            rate = 16000
            tt = np.arange(2 * rate) / rate
            wav = tmp_path / "drive.wav"
            save_wav(wav, Waveform(samples=0.4 * np.sin(2 * np.pi * 210 * tt), sample_rate=rate))
            template = data / "clip" / "processed" / "template.npz"
            reference = data / "clip" / "frames" / "000000.png"

            manifests = []
            for run in ("run_a", "run_b"):
                manifests.append(infer(wav, template, ckpt, reference, tmp_path / run, cfg, seed=9))
            assert manifests[0]["frames"] == 50

            streams = ["motion/mouth.bin", "motion/eye.bin", "motion/torso.bin", "motion/face.bin", "motion/pose.bin", "manifest.json"]
            streams += [f"frames/{t:06d}.png" for t in range(50)]
            for rel in streams:
                a = (tmp_path / "run_a" / rel).read_bytes()
                b = (tmp_path / "run_b" / rel).read_bytes()
                assert a == b, f"{rel} differs between identical seeded runs"

    def test_window_cover_law(self):
        with criterion(10, "window cover law", 60.0):
            for total in range(1, 10_001):
                windows = sliding_windows(total)
                assert windows[0][0] == 0
                prev_end = 0
                for start, end in windows:
                    assert start <= prev_end  # no gap
                    assert end - start == min(300, total)
                    prev_end = end
                assert prev_end == total
