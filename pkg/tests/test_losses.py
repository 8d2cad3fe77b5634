import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pyramidfill.discriminator import PatchDiscriminator
from pyramidfill.losses import (
    LossWeights,
    StubPerceptual,
    VGGPerceptual,
    adversarial_d_loss,
    adversarial_g_loss,
    adversarial_losses,
    build_perceptual,
    feature_matching_loss,
    feature_matching_perceptual_loss,
    kl_loss,
    perceptual_diversity_loss,
    prior_distillation_loss,
    reconstruction_loss,
    total_deterministic,
    total_probabilistic,
)

RNG = np.random.default_rng(20240811)


def t64(arr):
    return torch.from_numpy(np.asarray(arr, dtype=np.float64))


# ---------------------------------------------------------------------------
# Values pinned ahead of time from the formulas
# ---------------------------------------------------------------------------


def test_distillation_pinned_value():
    target = t64([[[[1.0, 0.0], [0.0, 0.0]]]])
    projection = torch.zeros_like(target)
    mask = torch.ones(1, 1, 2, 2, dtype=torch.float64)
    loss = prior_distillation_loss([target], [projection], [mask], alpha=3.0)
    assert math.isclose(float(loss), 1.0, abs_tol=1e-12)


def test_distillation_identity_and_maskless_collapse():
    target = t64(RNG.normal(size=(1, 2, 4, 4)))
    mask = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    assert float(prior_distillation_loss([target], [target.clone()], [mask], 3.0)) == 0.0
    projection = torch.zeros_like(target)
    plain = float((target - projection).abs().mean())
    loss = float(prior_distillation_loss([target], [projection], [mask], alpha=3.0))
    assert math.isclose(loss, plain, rel_tol=1e-12)


def test_reconstruction_pinned_values():
    real = torch.zeros(1, 3, 2, 2, dtype=torch.float64)
    fake = torch.full((1, 3, 2, 2), 0.1, dtype=torch.float64)
    ones = torch.ones(1, 1, 2, 2, dtype=torch.float64)
    zeros = torch.zeros_like(ones)
    assert math.isclose(float(reconstruction_loss(real, fake, ones, 4.0)), 0.5, abs_tol=1e-12)
    assert math.isclose(float(reconstruction_loss(real, fake, zeros, 4.0)), 0.1, abs_tol=1e-12)
    assert float(reconstruction_loss(real, real, ones, 4.0)) == 0.0


def test_gen_loss_pinned_value():
    patch = torch.full((1, 1, 4, 4), 0.5, dtype=torch.float64)
    assert math.isclose(float(adversarial_g_loss(patch)), -math.log(0.5), rel_tol=1e-12)


def test_disc_loss_decreases_as_separation_improves():
    values = []
    for d in (0.4, 0.2, 0.05):
        real = torch.full((1, 1, 2, 2), d, dtype=torch.float64)
        fake = torch.full((1, 1, 2, 2), 1.0 - d, dtype=torch.float64)
        loss = float(adversarial_d_loss(real, fake))
        assert math.isclose(loss, 2.0 * math.log(d), rel_tol=1e-9)
        values.append(loss)
    assert values[0] > values[1] > values[2]


def test_log_clamp_keeps_losses_finite():
    real = torch.zeros(1, 1, 2, 2)
    fake = torch.ones(1, 1, 2, 2)
    assert math.isfinite(float(adversarial_d_loss(real, fake)))
    assert math.isfinite(float(adversarial_g_loss(fake)))


def test_kl_pinned_values():
    mu = torch.zeros(1, 4, dtype=torch.float64)
    logvar = torch.zeros(1, 4, dtype=torch.float64)
    assert float(kl_loss(mu, logvar)) == 0.0
    mu = torch.tensor([[1.0]], dtype=torch.float64)
    assert math.isclose(float(kl_loss(mu, torch.zeros(1, 1, dtype=torch.float64))), 0.5,
                        abs_tol=1e-12)
    logvar = torch.tensor([[2.0]], dtype=torch.float64)  # sigma = e
    expected = 0.5 * (math.e**2 - 2.0 - 1.0)
    assert math.isclose(float(kl_loss(torch.zeros(1, 1, dtype=torch.float64), logvar)),
                        expected, rel_tol=1e-12)
    assert math.isclose(expected, 2.1945, abs_tol=5e-5)


def test_feature_matching_pinned_value():
    disc_real = [torch.zeros(1, 2, 4, 4, dtype=torch.float64)]
    disc_fake = [torch.full((1, 2, 4, 4), 0.2, dtype=torch.float64)]
    perc_real = [torch.zeros(1, 3, 4, 4, dtype=torch.float64)]
    perc_fake = [torch.full((1, 3, 4, 4), -0.3, dtype=torch.float64)]
    loss = feature_matching_perceptual_loss(disc_real, disc_fake, perc_real, perc_fake)
    assert math.isclose(float(loss), 0.5, abs_tol=1e-12)
    swapped = feature_matching_perceptual_loss(disc_fake, disc_real, perc_fake, perc_real)
    assert math.isclose(float(loss), float(swapped), rel_tol=1e-12)


def test_diversity_pinned_values():
    feats = [t64(RNG.normal(size=(1, 2, 4, 4)))]
    mask = torch.ones(1, 1, 4, 4, dtype=torch.float64)
    same = perceptual_diversity_loss(feats, [feats[0].clone()], mask, 1e-5)
    assert math.isclose(float(same), 1e5, rel_tol=1e-9)
    # single layer with masked divergence exactly 1.0
    f1 = [torch.zeros(1, 1, 4, 4, dtype=torch.float64)]
    f2 = [torch.full((1, 1, 4, 4), 1.0 / 16.0, dtype=torch.float64)]
    loss = perceptual_diversity_loss(f1, f2, mask, 1e-5)
    assert math.isclose(float(loss), 1.0 / (1.0 + 1e-5), rel_tol=1e-12)


def test_diversity_strictly_decreases_with_divergence():
    mask = torch.ones(1, 1, 4, 4, dtype=torch.float64)
    base = [t64(RNG.normal(size=(1, 2, 4, 4)))]
    delta = t64(np.abs(RNG.normal(size=(1, 2, 4, 4))) + 0.1)
    near = perceptual_diversity_loss(base, [base[0] + delta], mask, 1e-5)
    far = perceptual_diversity_loss(base, [base[0] + 2.0 * delta], mask, 1e-5)
    assert float(far) < float(near)


def test_total_pinned_values():
    w = LossWeights()
    det = total_deterministic(t64(1.0), t64(0.1), t64(0.5), w)
    assert math.isclose(float(det), 2.5, rel_tol=1e-12)
    prob = total_probabilistic(t64(2.5), t64(0.1), t64(0.2), t64(1.0), w)
    assert math.isclose(float(prob), 3.75, rel_tol=1e-12)
    w0 = LossWeights(lambda4=0.0)
    without = total_probabilistic(t64(2.5), t64(0.1), t64(99.0), t64(1.0), w0)
    assert math.isclose(float(without), 2.5 + 1.0 + 0.05, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# Agreement with the independent transcriptions, 10 random instances each
# ---------------------------------------------------------------------------


def test_distillation_matches_oracle():
    for _ in range(10):
        shapes = [(2, 3, 8, 8), (2, 5, 4, 4), (2, 2, 2, 2)]
        targets = [RNG.normal(size=s) for s in shapes]
        projections = [RNG.normal(size=s) for s in shapes]
        masks = [(RNG.random(size=(2, 1, s[2], s[3])) > 0.5).astype(np.float64) for s in shapes]
        alpha = float(RNG.uniform(0.0, 5.0))
        ours = prior_distillation_loss(
            [t64(t) for t in targets], [t64(p) for p in projections],
            [t64(m) for m in masks], alpha)
        assert math.isclose(float(ours), oracles.distillation(targets, projections, masks, alpha),
                            rel_tol=1e-9, abs_tol=1e-6)


def test_reconstruction_matches_oracle():
    for _ in range(10):
        real = RNG.uniform(-1, 1, size=(2, 3, 6, 6))
        fake = RNG.uniform(-1, 1, size=(2, 3, 6, 6))
        mask = (RNG.random(size=(2, 1, 6, 6)) > 0.5).astype(np.float64)
        delta = float(RNG.uniform(0.0, 8.0))
        ours = float(reconstruction_loss(t64(real), t64(fake), t64(mask), delta))
        assert math.isclose(ours, oracles.reconstruction(real, fake, mask, delta),
                            rel_tol=1e-9, abs_tol=1e-6)


def test_adversarial_matches_oracle():
    for _ in range(10):
        real = RNG.uniform(1e-6, 1 - 1e-6, size=(2, 1, 4, 4))
        fake = RNG.uniform(1e-6, 1 - 1e-6, size=(2, 1, 4, 4))
        g = float(adversarial_g_loss(t64(fake)))
        d = float(adversarial_d_loss(t64(real), t64(fake)))
        d_ns = float(adversarial_d_loss(t64(real), t64(fake), form="nonsaturating"))
        assert math.isclose(g, oracles.gen_adversarial(fake), rel_tol=1e-9, abs_tol=1e-6)
        assert math.isclose(d, oracles.disc_adversarial(real, fake), rel_tol=1e-9, abs_tol=1e-6)
        assert math.isclose(d_ns, oracles.disc_adversarial_nonsaturating(real, fake),
                            rel_tol=1e-9, abs_tol=1e-6)


def test_kl_matches_oracle():
    for _ in range(10):
        mu = RNG.normal(size=(3, 6))
        logvar = RNG.normal(size=(3, 6))
        ours = float(kl_loss(t64(mu), t64(logvar)))
        assert math.isclose(ours, oracles.kl(mu, logvar), rel_tol=1e-9, abs_tol=1e-6)


def test_feature_matching_matches_oracle():
    for _ in range(10):
        shapes = [(1, 4, 8, 8), (1, 8, 4, 4), (1, 16, 2, 2)]
        real = [RNG.normal(size=s) for s in shapes]
        fake = [RNG.normal(size=s) for s in shapes]
        ours = float(feature_matching_loss([t64(r) for r in real], [t64(f) for f in fake]))
        assert math.isclose(ours, oracles.feature_matching(real, fake),
                            rel_tol=1e-9, abs_tol=1e-6)


def test_diversity_matches_oracle():
    for _ in range(10):
        shapes = [(1, 4, 8, 8), (1, 8, 4, 4)]
        f1 = [RNG.normal(size=s) for s in shapes]
        f2 = [RNG.normal(size=s) for s in shapes]
        mask = (RNG.random(size=(1, 1, 8, 8)) > 0.4).astype(np.float64)
        # nearest-neighbor downscale by integer factor: stride sampling
        masks_per_layer = [mask, mask[:, :, ::2, ::2]]
        eps = 1e-5
        ours = float(perceptual_diversity_loss([t64(f) for f in f1], [t64(f) for f in f2],
                                               t64(mask), eps))
        assert math.isclose(ours, oracles.diversity(f1, f2, masks_per_layer, eps),
                            rel_tol=1e-9, abs_tol=1e-6)


def test_totals_match_oracle():
    for _ in range(10):
        parts = RNG.uniform(0, 3, size=4)
        w = LossWeights(lambda1=float(RNG.uniform(0, 20)), lambda3=float(RNG.uniform(0, 20)))
        det = float(total_deterministic(t64(parts[0]), t64(parts[1]), t64(parts[2]), w))
        assert math.isclose(det, oracles.total_det(parts[0], parts[1], parts[2],
                                                   w.lambda1, w.lambda2), rel_tol=1e-9)
        prob = float(total_probabilistic(t64(det), t64(parts[3]), t64(parts[0]), t64(parts[1]), w))
        assert math.isclose(prob, oracles.total_prob(det, parts[3], parts[0], parts[1],
                                                     w.lambda3, w.lambda4, w.lambda5),
                            rel_tol=1e-9)


# ---------------------------------------------------------------------------
# Structure and guards
# ---------------------------------------------------------------------------


def test_shape_mismatches_raise():
    with pytest.raises(ValueError):
        prior_distillation_loss([torch.zeros(1, 2, 4, 4)], [torch.zeros(1, 3, 4, 4)],
                                [torch.zeros(1, 1, 4, 4)], 3.0)
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 2, 2),
                            torch.zeros(1, 1, 4, 4), 4.0)
    with pytest.raises(ValueError):
        feature_matching_loss([torch.zeros(1, 1, 2, 2)], [])
    with pytest.raises(ValueError):
        adversarial_g_loss(torch.zeros(1), form="wasserstein")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 8.0))
def test_reconstruction_zero_iff_equal(seed, delta):
    rng = np.random.default_rng(seed)
    real = t64(rng.uniform(-1, 1, size=(1, 3, 4, 4)))
    mask = t64((rng.random(size=(1, 1, 4, 4)) > 0.5).astype(np.float64))
    assert float(reconstruction_loss(real, real.clone(), mask, delta)) == 0.0
    bump = real.clone()
    bump[0, 0, 0, 0] += 0.25
    assert float(reconstruction_loss(real, bump, mask, delta)) > 0.0


def test_adversarial_losses_wrapper_runs_the_discriminator():
    torch.manual_seed(0)
    disc = PatchDiscriminator((4, 8, 8, 8, 8), taps=2)
    real = torch.rand(2, 3, 32, 32)
    fake = torch.rand(2, 3, 32, 32)
    g, d = adversarial_losses(disc, real, fake)
    assert math.isfinite(float(g.detach())) and math.isfinite(float(d.detach()))


# ---------------------------------------------------------------------------
# Perceptual extractors
# ---------------------------------------------------------------------------


def test_stub_perceptual_contract():
    a = StubPerceptual(taps=5, seed=1)
    b = StubPerceptual(taps=5, seed=1)
    image = torch.rand(1, 3, 32, 32) * 2 - 1
    fa, fb = a(image), b(image)
    assert len(fa) == 5
    sizes = [f.shape[-1] for f in fa]
    assert sizes == sorted(sizes, reverse=True)
    for x, y in zip(fa, fb):
        assert torch.equal(x, y)
    assert all(not p.requires_grad for p in a.parameters())


def test_vgg_perceptual_tap_layout():
    vgg = VGGPerceptual()  # randomly initialized; layout is what's under test
    image = torch.rand(1, 3, 64, 64) * 2 - 1
    feats = vgg(image)
    assert [f.shape[1] for f in feats] == [64, 128, 256, 512, 512]
    assert [f.shape[-1] for f in feats] == [64, 32, 16, 8, 4]
    assert all(not p.requires_grad for p in vgg.parameters())


def test_build_perceptual_dispatch():
    assert isinstance(build_perceptual("stub"), StubPerceptual)
    with pytest.raises(ValueError, match="unknown perceptual"):
        build_perceptual("clip")
