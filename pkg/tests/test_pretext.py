import pytest
import torch

from pyramidfill.pretext import (
    BackboneExtractor,
    EdgeExtractor,
    StubExtractor,
    build_extractor,
    extract_targets,
)


@pytest.mark.parametrize("size", [32, 64, 128])
def test_targets_follow_dyadic_layout(size):
    extractor = StubExtractor((4, 8, 16), seed=0)
    image = torch.rand(2, 3, size, size) * 2 - 1
    targets = extract_targets(extractor, image, 3)
    assert len(targets) == 3
    for level, t in enumerate(targets, start=1):
        assert t.shape[-1] == size // 2 ** (level - 1)
        assert t.shape[0] == 2
        assert not t.requires_grad


def test_stub_is_seeded_and_frozen():
    a = StubExtractor((4, 8, 16), seed=3)
    b = StubExtractor((4, 8, 16), seed=3)
    c = StubExtractor((4, 8, 16), seed=4)
    image = torch.rand(1, 3, 32, 32)
    fa, fb, fc = a(image), b(image), c(image)
    for x, y in zip(fa, fb):
        assert torch.equal(x, y)
    assert not torch.equal(fa[0], fc[0])
    assert all(not p.requires_grad for p in a.parameters())


def test_edge_extractor_quiet_on_flat_input():
    extractor = EdgeExtractor(3)
    flat = torch.full((1, 3, 32, 32), 0.25)
    textured = torch.rand(1, 3, 32, 32)
    flat_feats = extractor(flat)
    textured_feats = extractor(textured)
    for f, t in zip(flat_feats, textured_feats):
        assert float(f.abs().max()) < 1e-3
        assert float(t.abs().max()) > 1e-3


def test_level_count_mismatch_rejected():
    extractor = StubExtractor((4, 8), seed=0)  # produces 2 maps
    image = torch.rand(1, 3, 32, 32)
    with pytest.raises(ValueError, match="2 maps"):
        extract_targets(extractor, image, 3)


def test_spatial_contract_violation_rejected():
    class Lying(StubExtractor):
        def _features(self, image2x):
            feats = super()._features(image2x)
            feats[1] = feats[1][..., :-1, :-1]
            return feats

    with pytest.raises(ValueError, match="level 2"):
        extract_targets(Lying((4, 8, 16)), torch.rand(1, 3, 32, 32), 3)


def test_non_image_input_rejected():
    extractor = StubExtractor((4, 8, 16))
    with pytest.raises(ValueError, match="B3HW"):
        extract_targets(extractor, torch.rand(3, 32, 32), 3)


def test_build_extractor_kinds():
    assert isinstance(build_extractor("stub", 3, stub_channels=(4, 8, 16)), StubExtractor)
    assert isinstance(build_extractor("edge", 3), EdgeExtractor)
    with pytest.raises(ValueError, match="unknown pretext kind"):
        build_extractor("astrology", 3)
    with pytest.raises(ValueError, match="channel widths"):
        build_extractor("stub", 3, stub_channels=(4, 8))


def test_backbone_adapter_satisfies_contract():
    # randomly initialized resnet18; the tap layout is what matters here
    extractor = build_extractor("classification", 3)
    assert isinstance(extractor, BackboneExtractor)
    assert extractor.out_channels == (64, 64, 128)
    image = torch.rand(1, 3, 64, 64) * 2 - 1
    targets = extract_targets(extractor, image, 3)
    assert [t.shape[-1] for t in targets] == [64, 32, 16]
    assert all(not p.requires_grad for p in extractor.parameters())


def test_backbone_stage_validation():
    with pytest.raises(ValueError, match="consecutive"):
        BackboneExtractor("resnet18", stages=(0, 2, 3))
    with pytest.raises(ValueError, match="unknown torchvision"):
        BackboneExtractor("resnet7")
