import hashlib

import numpy as np
import pytest

from veinmt import diffcore as dc
from veinmt.diffcore import Array
from veinmt.veinsim import (NOISE_SIGMA, Pose, PoseRange, gen_dataset, make_template, ncc, read_manifest, render,
                            synthesize)


@pytest.fixture(scope="module")
def tmpl():
    return make_template(42)


def test_identity_pose_has_zero_flow(tmpl):
    img, flow = render(tmpl, Pose())
    assert img.shape == (64, 144) and flow.shape == (2, 64, 144)
    assert np.abs(flow).max() < 1e-9


def test_translation_is_an_exact_shift(tmpl):
    canon, _ = render(tmpl, Pose())
    posed, flow = render(tmpl, Pose(tx=3))
    np.testing.assert_allclose(flow[0], 3.0, atol=1e-5)
    np.testing.assert_allclose(flow[1], 0.0, atol=1e-5)
    assert np.abs(posed[:, 3:] - canon[:, :-3]).max() <= 2 * NOISE_SIGMA


def test_same_template_stays_similar_across_poses():
    rng = np.random.default_rng(0)
    for seed in range(20):
        t = make_template(seed)
        a, _ = render(t, PoseRange().sample(rng), rng)
        b, _ = render(t, PoseRange().sample(rng), rng)
        assert ncc(a, b) >= 0.6


@pytest.mark.parametrize("pose", [Pose(tx=4, ty=-2), Pose(rot=3), Pose(tx=-5, ty=1, rot=-2)])
def test_ground_truth_flow_reproduces_the_posed_render(tmpl, pose):
    canon, _ = render(tmpl, Pose())
    posed, flow = render(tmpl, pose)
    warped = dc.grid_sample(Array(canon[None, None]), Array(-flow[None])).data[0, 0]
    interior = np.zeros_like(canon, bool)
    interior[12:-12, 12:-12] = True
    err = np.abs(warped - posed)[interior]
    assert np.sqrt((err ** 2).mean()) <= 2 * NOISE_SIGMA


def test_roll_moves_veins_across_the_finger(tmpl):
    a, _ = render(tmpl, Pose())
    b, flow = render(tmpl, Pose(roll=20))
    assert not np.allclose(a, b)
    assert np.abs(flow[1]).max() > 1.0 and np.abs(flow[0]).max() < 1e-9


def test_pose_bounds_enforced(tmpl):
    with pytest.raises(ValueError, match="roll"):
        render(tmpl, Pose(roll=45))
    with pytest.raises(ValueError, match="border"):
        render(tmpl, Pose(ty=20))


def test_render_values_and_determinism(tmpl):
    a, _ = render(tmpl, Pose(1, 1, 1, 5), np.random.default_rng(3))
    b, _ = render(make_template(42), Pose(1, 1, 1, 5), np.random.default_rng(3))
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() <= 1


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + p.read_bytes())
    return h.hexdigest()


def test_gen_dataset_layout_and_byte_determinism(tmp_path):
    ds = gen_dataset(tmp_path / "a", 20, 10, seed=7)
    gen_dataset(tmp_path / "b", 20, 10, seed=7)
    assert len(list((tmp_path / "a").glob("*/*.png"))) == 200 and len(ds) == 200
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    man = read_manifest(tmp_path / "a")
    assert len(man) == 200 and man[0][:2] == ("c000", "s00")
    assert np.load(tmp_path / "a" / "flows.npy").shape == (200, 2, 64, 144)


def test_gen_dataset_refuses_non_empty_root(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "junk").write_text("1")
    with pytest.raises(FileExistsError):
        gen_dataset(tmp_path / "x", 2, 2)
    gen_dataset(tmp_path / "x", 2, 2, overwrite=True)
    assert not (tmp_path / "x" / "junk").exists()


def test_single_sample_classes_rejected():
    with pytest.raises(ValueError):
        synthesize(3, 1)


def test_classes_are_separable():
    ds = synthesize(6, 4, seed=1).to_dataset()
    intra, inter = [], []
    for i in range(len(ds)):
        for j in range(i + 1, len(ds)):
            (intra if ds.labels[i] == ds.labels[j] else inter).append(ncc(ds.images[i], ds.images[j]))
    assert np.mean(inter) < np.mean(intra)


def test_wider_test_poses_for_second_half():
    s = synthesize(3, 6, PoseRange(0, 0, 0, 0), seed=0, test_pose_ranges=PoseRange(6, 3, 2, 20))
    for smp in s.samples:
        idx = int(smp.sample_id[1:])
        if idx < 3:
            assert smp.pose.as_tuple() == (0, 0, 0, 0)
