import numpy as np
import numpy.testing as npt
import pytest

from modalign import geometry as G
from modalign.errors import DegenerateProjection, SingularSystem

import oracles

SQUARE_128 = G.fixed_corners(128)


def random_homography(rng, max_jitter=25.0):
    """A well-conditioned homography built from a jittered unit square."""
    while True:
        dst = SQUARE_128.corners + rng.uniform(-max_jitter, max_jitter, (4, 2))
        try:
            return G.from_four_points(SQUARE_128, G.CornerSet(dst, "target"))
        except (SingularSystem, ValueError):
            continue


def test_identity_matrix_and_apply():
    h = G.identity()
    npt.assert_array_equal(h.p, [1, 0, 0, 0, 1, 0, 0, 0, 1])
    npt.assert_array_equal(G.apply(h, (5, 7)), [5.0, 7.0])
    npt.assert_array_equal(G.apply(h, (63.5, 12.25)), [63.5, 12.25])


def test_compose_with_identity_is_noop():
    rng = np.random.default_rng(7)
    h = random_homography(rng)
    npt.assert_allclose(G.compose(G.identity(), h).p, h.p, rtol=0, atol=1e-12)
    npt.assert_allclose(G.compose(h, G.identity()).p, h.p, rtol=0, atol=1e-12)


def test_translation_apply():
    h = G.translation(10, 5)
    npt.assert_array_equal(G.apply(h, (0, 0)), [10.0, 5.0])


def test_projective_apply_matches_hand_value_and_matrix_oracle():
    p = np.array([1, 0, 0, 0, 1, 0, 0.001, 0, 1.0])
    h = G.Homography(p)
    got = G.apply(h, (100, 0))
    npt.assert_allclose(got, [100 / 1.1, 0.0], atol=1e-12)
    npt.assert_allclose(
        got, oracles.apply_homography_matrix(h.matrix, (100, 0)), atol=1e-12
    )


def test_apply_points_matches_scalar_apply():
    rng = np.random.default_rng(3)
    h = random_homography(rng)
    pts = rng.uniform(0, 127, (50, 2))
    batch = G.apply_points(h, pts)
    for i in range(50):
        npt.assert_allclose(batch[i], G.apply(h, pts[i]), atol=1e-12)


def test_apply_degenerate_denominator_raises():
    h = G.Homography.from_matrix([[1, 0, 0], [0, 1, 0], [-0.01, 0, 1]])
    with pytest.raises(DegenerateProjection):
        G.apply(h, (100.0, 0.0))


def test_from_four_points_identity_and_translation():
    npt.assert_allclose(G.from_four_points(SQUARE_128, SQUARE_128).p, G.identity().p, atol=1e-9)
    shifted = G.CornerSet(SQUARE_128.corners + [10.0, 5.0], "target")
    h = G.from_four_points(SQUARE_128, shifted)
    npt.assert_allclose(h.p, G.translation(10, 5).p, atol=1e-9)


def test_from_four_points_general_quad_roundtrip_and_lstsq_oracle():
    dst = G.CornerSet(np.array([[10.0, 20], [150, 15], [160, 170], [5, 160]]), "target")
    h = G.from_four_points(SQUARE_128, dst)
    assert h.p[8] == 1.0
    npt.assert_allclose(G.apply_points(h, SQUARE_128.corners), dst.corners, atol=1e-6)
    npt.assert_allclose(h.matrix, oracles.dlt_lstsq(SQUARE_128.corners, dst.corners), atol=1e-8)


def test_from_four_points_collinear_raises():
    line = np.array([[0.0, 0], [10, 0], [20, 0], [30, 0]])
    with pytest.raises((SingularSystem, ValueError)):
        G.from_four_points(G.CornerSet(line + [[0, 0], [0, 0], [0, 40], [0, 40]], "source"),
                           SQUARE_128)
    # degenerate source quad is rejected by the corner-set invariant itself
    with pytest.raises(ValueError):
        G.CornerSet(line, "source")


def test_inverse_identity_translation_and_roundtrip():
    npt.assert_allclose(G.inverse(G.identity()).p, G.identity().p, atol=1e-15)
    npt.assert_allclose(G.inverse(G.translation(10, 5)).p, G.translation(-10, -5).p, atol=1e-12)
    rng = np.random.default_rng(11)
    h = random_homography(rng)
    hinv = G.inverse(h)
    pts = rng.uniform(0, 127, (100, 2))
    back = G.apply_points(hinv, G.apply_points(h, pts))
    assert np.abs(back - pts).max() < 1e-6
    npt.assert_allclose(G.compose(h, hinv).p, G.identity().p, atol=1e-9)


def test_compose_translations_and_pointwise_oracle():
    npt.assert_allclose(
        G.compose(G.translation(3, 0), G.translation(0, 4)).p, G.translation(3, 4).p, atol=0
    )
    rng = np.random.default_rng(5)
    a, b = random_homography(rng), random_homography(rng)
    ab = G.compose(a, b)
    pts = rng.uniform(0, 127, (100, 2))
    via_compose = G.apply_points(ab, pts)
    via_chain = G.apply_points(a, G.apply_points(b, pts))
    npt.assert_allclose(via_compose, via_chain, rtol=1e-9, atol=1e-9)
    # independent oracle: plain matrix product
    npt.assert_allclose(ab.matrix * (a.matrix @ b.matrix)[2, 2], a.matrix @ b.matrix, atol=1e-12)


def test_apply_corners_preserves_order_and_frame():
    cs = G.apply_corners(G.translation(10, 5), SQUARE_128)
    assert cs.frame == "target"
    npt.assert_array_equal(cs.corners, SQUARE_128.corners + [10.0, 5.0])
    same = G.apply_corners(G.identity(), SQUARE_128)
    npt.assert_array_equal(same.corners, SQUARE_128.corners)


def test_apply_corners_matches_dlt_example():
    dst = G.CornerSet(np.array([[10.0, 20], [150, 15], [160, 170], [5, 160]]), "target")
    h = G.from_four_points(SQUARE_128, dst)
    npt.assert_allclose(G.apply_corners(h, SQUARE_128).corners, dst.corners, atol=1e-6)


def test_normalization_invariant_constructors():
    rng = np.random.default_rng(2)
    for _ in range(20):
        h = random_homography(rng)
        assert h.p[8] == 1.0
        assert G.inverse(h).p[8] == 1.0
        assert G.compose(h, h).p[8] == 1.0
    m = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    assert G.Homography.from_matrix(m).p[8] == 1.0


def test_homography_rejects_unnormalized_or_singular():
    with pytest.raises(ValueError):
        G.Homography(np.array([1, 0, 0, 0, 1, 0, 0, 0, 2.0]))
    with pytest.raises(SingularSystem):
        G.Homography(np.array([1, 0, 0, 2, 0, 0, 0, 0, 1.0]))  # rank-2 matrix


def test_round_trip_property_many_seeds():
    rng = np.random.default_rng(1234)
    for _ in range(50):
        h = random_homography(rng)
        pts = rng.uniform(0, 127, (20, 2))
        back = G.apply_points(G.inverse(h), G.apply_points(h, pts))
        assert np.abs(back - pts).max() < 1e-6


def test_dlt_reconstruction_property():
    # recover a known transform from its action on a second quad
    rng = np.random.default_rng(99)
    for _ in range(50):
        h = random_homography(rng)
        quad = G.CornerSet(
            SQUARE_128.corners + rng.uniform(-10, 10, (4, 2)), "source"
        )
        image = G.apply_corners(h, quad)
        h2 = G.from_four_points(quad, image)
        assert np.abs(h2.p - h.p).max() < 1e-6


def test_two_correspondence_sets_same_homography():
    rng = np.random.default_rng(42)
    h = random_homography(rng)
    for _ in range(10):
        quad = G.CornerSet(SQUARE_128.corners + rng.uniform(-8, 8, (4, 2)), "source")
        h2 = G.from_four_points(quad, G.apply_corners(h, quad))
        assert np.abs(h2.p - h.p).max() < 1e-6


def test_corner_set_validation():
    with pytest.raises(ValueError):
        G.CornerSet(np.zeros((4, 2)), "target")  # zero area
    bowtie = np.array([[0.0, 0], [100, 0], [0, 100], [100, 100]])  # self-crossing order
    with pytest.raises(ValueError):
        G.CornerSet(bowtie, "target")
    with pytest.raises(ValueError):
        G.CornerSet(SQUARE_128.corners, "banana")
