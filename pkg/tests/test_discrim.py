import numpy as np
import pytest
from scipy import stats

from upside.discrim import (Discriminator, StateBuffer, WeightedDataset, build_training_set,
                            discriminability)


def buf(owner, states):
    b = StateBuffer(owner, 1000)
    b.extend(states)
    return b


def test_state_buffer_is_fifo():
    b = StateBuffer(3, 4)
    b.extend([[0, 0], [1, 1], [2, 2]])
    b.extend([[3, 3], [4, 4]])
    np.testing.assert_array_equal(b.states[:, 0], [1, 2, 3, 4])
    b.clear()
    assert len(b) == 0


def test_fresh_discriminator_is_uniform():
    d = Discriminator([1, 2, 3, 4], rng=np.random.default_rng(0))
    p = d.predict(np.random.default_rng(1).uniform(0, 50, size=(10, 2)))
    np.testing.assert_allclose(p, 0.25)
    assert discriminability(d, buf(2, [[5, 5]])) == pytest.approx(0.25)


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        Discriminator([1, 1])


def test_add_class_keeps_existing_logits():
    rng = np.random.default_rng(0)
    d = Discriminator([1, 2], rng=rng)
    for _ in range(50):
        d.train_step([[10, 10], [40, 40]], [1, 2])
    x = np.array([[10, 10], [40, 40], [25, 25]])
    before = d.logits(x)
    d.add_class(7)
    after = d.logits(x)
    np.testing.assert_allclose(after[:, :2], before)
    np.testing.assert_allclose(after[:, 2], 0.0)
    assert 7 in d and d.n_classes == 3
    d.remove_class(1)
    np.testing.assert_allclose(d.logits(x), after[:, 1:])
    assert d.classes == [2, 7] and d.index_of(7) == 1
    with pytest.raises(ValueError):
        d.add_class(2)


def test_empty_discriminator_grows_from_placeholder():
    d = Discriminator([])
    with pytest.raises(ValueError):
        d.predict([[1, 1]])
    d.add_class(5)
    np.testing.assert_allclose(d.predict([[1, 1]]), [[1.0]])


def test_separable_clusters_become_discriminable():
    rng = np.random.default_rng(0)
    centres = {1: (10, 10), 2: (40, 10), 3: (25, 40)}
    bufs = {z: buf(z, rng.normal(c, 1.5, size=(200, 2))) for z, c in centres.items()}
    d = Discriminator(list(centres), rng=rng, lr=3e-3)
    ds = build_training_set(bufs)
    losses = []
    for _ in range(400):
        s, y = ds.sample(rng, 64)
        losses.append(d.train_step(s, y))
    assert np.mean(losses[-20:]) < 0.1 < losses[0]
    assert all(discriminability(d, b) > 0.9 for b in bufs.values())


def test_identical_buffers_stay_near_chance():
    rng = np.random.default_rng(1)
    states = rng.uniform(20, 30, size=(300, 2))
    bufs = {1: buf(1, states), 2: buf(2, states)}
    d = Discriminator([1, 2], rng=rng, lr=3e-3)
    ds = build_training_set(bufs)
    for _ in range(300):
        d.train_step(*ds.sample(rng, 64))
    q = [discriminability(d, b) for b in bufs.values()]
    # symmetric data: the optimum is 1/2 for both, and the two averages sum to 1 exactly
    assert sum(q) == pytest.approx(1.0)
    assert max(q) < 0.6


def test_snapshot_is_frozen():
    rng = np.random.default_rng(2)
    d = Discriminator([1, 2], rng=rng)
    snap = d.snapshot()
    x = np.array([[10.0, 10.0]])
    for _ in range(20):
        d.train_step(x, [1])
    np.testing.assert_allclose(snap.predict(x), [[0.5, 0.5]])
    assert d.prob_of(x, 1)[0] > 0.5


def test_weighted_sampling_matches_weights_chi_square():
    rng = np.random.default_rng(3)
    bufs = {1: buf(1, np.zeros((10, 2))), 2: buf(2, np.ones((30, 2))), 3: buf(3, np.full((20, 2), 2.0))}
    ds = build_training_set(bufs, consolidated=[1], consolidated_weight=3.0)
    # owner mass proportional to size * weight: 30, 30, 20
    n = 40_000
    _, y = ds.sample(rng, n)
    counts = [np.sum(y == z) for z in (1, 2, 3)]
    expected = np.array([30, 30, 20]) / 80 * n
    assert stats.chisquare(counts, expected).pvalue > 1e-3


def test_explicit_weights_override():
    bufs = {1: buf(1, np.zeros((5, 2))), 2: buf(2, np.ones((5, 2)))}
    ds = build_training_set(bufs, consolidated=[1], weights={1: 1.0, 2: 4.0})
    assert ds.p[ds.labels == 2].sum() == pytest.approx(0.8)
    assert isinstance(ds, WeightedDataset) and len(ds) == 10


def test_empty_buffer_is_an_error():
    with pytest.raises(ValueError):
        build_training_set({1: StateBuffer(1, 10)})
    with pytest.raises(ValueError):
        discriminability(Discriminator([1]), StateBuffer(1, 10))
