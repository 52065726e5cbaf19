import dataclasses

import numpy as np
import pytest

from symface.errors import ParameterError
from symface.masking import organ_mask
from symface.scs import (
    ConstantFill,
    MIRROR_TARGET_PARTS,
    InfluenceHeatmap,
    LocalFill,
    MirrorFill,
    heatmap,
    influence,
    parse_inpainter,
    read_heatmap_csv,
    render,
    scs_from_heatmaps,
    symmetry_concentration,
    target_regions,
    write_heatmap_csv,
    write_scs_outputs,
)
from symface.toyfaces import PART_CODES, reflect


def test_oracle_inpainters_keep_known_pixels(face64):
    hole = organ_mask(face64, "eye", "right").grid.astype(bool)
    for inp in (ConstantFill(0.3), MirrorFill(face64.midline_x), LocalFill(3)):
        out = inp(face64.image, hole)
        assert out.shape == face64.image.shape
        assert np.array_equal(out[~hole], face64.image[~hole])
        assert np.array_equal(out, inp(face64.image, hole))


def test_mirror_fill_copies_reflection(face64):
    hole = organ_mask(face64, "eye", "right").grid.astype(bool)
    out = MirrorFill(face64.midline_x)(face64.image, hole)
    assert np.array_equal(out, face64.image)  # symmetric face: reflection restores it exactly


def test_mirror_fill_gray_when_source_missing():
    img = np.random.default_rng(0).random((8, 8, 3))
    hole = np.zeros((8, 8), bool)
    hole[2, 3] = hole[2, 5] = True  # mirror pair about column 4
    out = MirrorFill()(img, hole)
    assert (out[2, 3] == 0.5).all() and (out[2, 5] == 0.5).all()


def test_local_fill_is_local():
    rng = np.random.default_rng(1)
    img = rng.random((32, 32, 3))
    hole = np.zeros((32, 32), bool)
    hole[10:14, 10:14] = True
    far = img.copy()
    far[:, 25:] = rng.random((32, 7, 3))
    inp = LocalFill(3)
    assert np.array_equal(inp(img, hole)[hole], inp(far, hole)[hole])


def test_parse_inpainter():
    assert parse_inpainter("mirror") == MirrorFill()
    assert parse_inpainter("constant:0.2") == ConstantFill(0.2)
    assert parse_inpainter("local:7") == LocalFill(7)
    for bad in ("median", "local:x", "model:"):
        with pytest.raises(ParameterError):
            parse_inpainter(bad)


def test_constant_fill_has_no_influence(face64):
    held, _ = target_regions(face64, "eye")
    hm = heatmap(ConstantFill(), face64, held, 16)
    assert (hm.values == 0).all()


def test_mirror_influence_support(face128):
    held, mirror = target_regions(face128, "eye")
    hm = heatmap(MirrorFill(face128.midline_x), face128, held, 16)
    on_mirror = hm.tile_overlap(mirror) & ~hm.excluded
    assert (hm.values[on_mirror] > 0).all()
    assert (hm.values[~on_mirror] == 0).all()


def test_influence_ignores_pixels_outside_dependence(face64):
    held, _ = target_regions(face64, "eye")
    inp = LocalFill(2)
    base = heatmap(inp, face64, held, 16)
    far = face64.image.copy()
    far[-8:] = 1 - far[-8:]  # bottom rows, far from the eye
    moved = heatmap(inp, dataclasses.replace(face64, image=far), held, 16)
    assert np.array_equal(base.values, moved.values)


def test_influence_rejects_overlap(face64):
    held, _ = target_regions(face64, "eye")
    rows, cols = np.nonzero(held)
    with pytest.raises(ParameterError):
        influence(MirrorFill(), face64, held, (rows[0] // 16, cols[0] // 16), 16)


def test_heatmap_matches_single_calls_and_workers(face64):
    held, _ = target_regions(face64, "eye")
    hm = heatmap(LocalFill(5), face64, held, 16)
    par = heatmap(LocalFill(5), face64, held, 16, workers=4)
    assert np.array_equal(hm.values, par.values)
    assert hm.values.shape == (4, 4)
    for i, j in hm.tiles():
        if not hm.excluded[i, j]:
            assert hm.values[i, j] == influence(LocalFill(5), face64, held, (i, j), 16)
        else:
            assert hm.values[i, j] == 0
    with pytest.raises(ParameterError):
        heatmap(LocalFill(5), face64, held, 24)


def test_background_and_held_tiles_excluded(face128):
    held, _ = target_regions(face128, "eye")
    hm = heatmap(ConstantFill(), face128, held, 16)
    face = face128.parts.face_mask().astype(bool)
    assert hm.excluded[~hm.tile_overlap(face)].all()
    assert hm.excluded[hm.tile_overlap(held)].all()


def test_scs_constant_is_zero(face128):
    assert symmetry_concentration(ConstantFill(), face128, "eye").score == 0.0


@pytest.mark.parametrize("target", ["eye", "half"])
def test_mirror_beats_local(face128, target):
    mirror = symmetry_concentration(MirrorFill(), face128, target)
    local = symmetry_concentration(LocalFill(5), face128, target)
    assert 0 <= local.score < mirror.score <= 1


def test_scs_scale_invariant(face128):
    result = symmetry_concentration(LocalFill(5), face128, "half")
    scaled = [InfluenceHeatmap(hm.K, hm.values * 7.5, hm.excluded, hm.organ_mask, hm.face_mask)
              for hm in result.heatmaps.values()]
    score, _ = scs_from_heatmaps(scaled, result.mirror)
    assert score == pytest.approx(result.score, rel=1e-12)


def test_target_regions(face64):
    held, mirror = target_regions(face64, "eye")
    assert np.array_equal(reflect(held, face64.midline_x), mirror)
    held, mirror = target_regions(face64, "half")
    assert not (mirror & held).any()
    assert np.isin(face64.parts.labels[mirror], [PART_CODES[p] for p in MIRROR_TARGET_PARTS]).all()
    with pytest.raises(ParameterError):
        target_regions(face64, "nose")


def test_render_and_csv(tmp_path, face64):
    result = symmetry_concentration(LocalFill(5), face64, "eye", ks=(16, 32))
    rows = write_heatmap_csv(list(result.heatmaps.values()), tmp_path / "h.csv")
    assert rows == 16 + 4
    back = read_heatmap_csv(tmp_path / "h.csv")
    for K, hm in result.heatmaps.items():
        assert np.allclose(back[K]["values"], hm.values, atol=1e-6)
        assert np.array_equal(back[K]["excluded"], hm.excluded)
    paths = write_scs_outputs(result, tmp_path / "out")
    assert paths["heatmap_K16"].is_file() and paths["csv"].is_file()


def test_render_zero_heatmap_is_dark(tmp_path, face64):
    held, _ = target_regions(face64, "eye")
    hm = heatmap(ConstantFill(), face64, held, 16)
    rgb = render(hm, tmp_path / "z.png", draw_boundary=False)
    assert rgb.shape == (64, 64, 3) and rgb.max() == 0
    rgb = render(hm, tmp_path / "b.png")
    assert (rgb[..., 0] == 255).any()
