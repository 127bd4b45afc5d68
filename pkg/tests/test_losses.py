#!/usr/bin/env python3
"""Tests for SED/DoA losses and the frame- and chunk-level PIT combinations."""

import math
import os
import sys
from itertools import permutations

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.data.labels import FrameLabels, LabelRow
from seld_einv2.diffcore.tensor import Tensor
from seld_einv2.errors import ConfigError, DimensionError
from seld_einv2.losses import (
    Chunk,
    assignment_totals,
    chunk_segmentation,
    compute_loss,
    cpit_loss,
    doa_loss,
    pairwise_costs,
    pit_loss,
    sed_loss,
    select_assignments,
    seldnet_loss,
    tpit_loss,
    track_permutations,
)
from seld_einv2.run_config import LossConfig

K = 5


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad, dtype=np.float64)


def random_labels(rng, n_frames, n_tracks, n_classes=K):
    active = rng.random((n_frames, n_tracks)) < 0.6
    class_index = np.where(active, rng.integers(0, n_classes, (n_frames, n_tracks)), -1)
    doa = rng.standard_normal((n_frames, n_tracks, 3))
    doa /= np.linalg.norm(doa, axis=-1, keepdims=True)
    doa[~active] = 0.0
    events = []
    for t in range(n_frames):
        events.append(frozenset((int(class_index[t, m]), m) for m in range(n_tracks) if active[t, m]))
    return FrameLabels(active, class_index, doa, events)


def random_prediction(rng, n_frames, n_tracks, n_classes=K):
    sed = rng.uniform(0.05, 0.95, (n_frames, n_tracks, n_classes))
    doa = rng.uniform(-0.9, 0.9, (n_frames, n_tracks, 3))
    return sed, doa


def pair_cost(sed, doa, labels, t, i, j, beta=1.0):
    y = np.zeros(K)
    if labels.active[t, j]:
        y[labels.class_index[t, j]] = 1.0
    bce = -np.mean(y * np.log(sed[t, i]) + (1 - y) * np.log(1 - sed[t, i]))
    mse = np.mean((doa[t, i] - labels.doa[t, j]) ** 2) if labels.active[t, j] else 0.0
    return bce + beta * mse


def enumerated(sed, doa, labels, chunked=False):
    n_frames, m = labels.active.shape
    perms = list(permutations(range(m)))
    frame_cost = np.array([[sum(pair_cost(sed, doa, labels, t, i, p[i]) for i in range(m)) for p in perms]
                           for t in range(n_frames)])
    if not chunked:
        return frame_cost.min(axis=1).mean()
    total = 0.0
    for chunk in chunk_segmentation(labels):
        total += frame_cost[chunk.start:chunk.end].sum(axis=0).min()
    return total / n_frames


class TestElementLosses:
    """Test suite for sed_loss and doa_loss."""

    def test_bce_at_half(self):
        assert sed_loss(t64(np.full(14, 0.5)), np.eye(14)[3]).item() == pytest.approx(math.log(2))

    def test_bce_hand_case(self):
        assert sed_loss(t64([0.9, 0.1]), [1, 0]).item() == pytest.approx(-math.log(0.9))
        assert sed_loss(t64([0.9, 0.1]), [1, 0]).item() == pytest.approx(0.1054, abs=1e-4)

    def test_bce_clamped(self):
        value = sed_loss(t64([0.0, 1.0]), [1, 0]).item()
        assert np.isfinite(value)
        assert value == pytest.approx(-math.log(1e-7), rel=1e-6)

    def test_mse_hand_case(self):
        assert doa_loss(t64([0.0, 0.0, 0.0]), [1, 0, 0]).item() == pytest.approx(1 / 3)

    def test_mse_exact(self):
        assert doa_loss(t64([0.0, 1.0, 0.0]), [0, 1, 0]).item() == 0.0

    def test_inactive_track_is_free(self):
        assert doa_loss(t64([5.0, -3.0, 1.0]), [1, 0, 0], active=False).item() == 0.0


class TestAssignments:
    """Test suite for permutation enumeration and selection."""

    def test_lexicographic_permutations(self):
        assert track_permutations(3)[:2] == [(0, 1, 2), (0, 2, 1)]
        assert len(track_permutations(3)) == 6

    def test_minimum_is_selected(self):
        cost = np.array([[[[0.6, 0.2], [0.2, 0.7]]]])
        perms = track_permutations(2)
        np.testing.assert_allclose(assignment_totals(cost, perms)[0, 0], [1.3, 0.4])
        assert tuple(select_assignments(cost, [None], "tpit")[0, 0]) == (1, 0)

    def test_tie_takes_identity(self):
        cost = np.ones((1, 1, 2, 2))
        assert tuple(select_assignments(cost, [None], "tpit")[0, 0]) == (0, 1)

    def test_fixed_is_identity(self, rng):
        assign = select_assignments(rng.random((2, 4, 3, 3)), [None, None], "fixed")
        assert np.all(assign == np.arange(3))

    def test_linear_assignment_for_many_tracks(self, rng):
        cost = rng.random((1, 1, 7, 7))
        assign = select_assignments(cost, [None], "tpit")[0, 0]
        perms = track_permutations(7)
        assert sorted(assign) == list(range(7))
        best = assignment_totals(cost[0, 0], perms).min()
        assert cost[0, 0, np.arange(7), assign].sum() == pytest.approx(best, abs=1e-12)

    def test_unknown_method(self, rng):
        with pytest.raises(ConfigError):
            select_assignments(rng.random((1, 1, 2, 2)), [None], "greedy")


class TestChunks:
    """Test suite for chunk_segmentation."""

    def _labels(self, spans, n_frames):
        rows = []
        for track, (class_index, start, end) in enumerate(spans):
            rows.extend(LabelRow(frame=f, class_index=class_index, track=track, azimuth=10 * track, elevation=0)
                        for f in range(start, end))
        return FrameLabels.from_rows(rows, n_frames, 2)

    def test_single_event(self):
        assert chunk_segmentation(self._labels([(1, 0, 10)], 10)) == [Chunk(0, 10)]

    def test_overlap_boundaries(self):
        chunks = chunk_segmentation(self._labels([(1, 0, 10), (2, 5, 15)], 15))
        assert [(c.start, c.end) for c in chunks] == [(0, 5), (5, 10), (10, 15)]

    def test_track_handoff_splits(self):
        rows = [LabelRow(frame=f, class_index=0, track=0 if f < 5 else 1, azimuth=10, elevation=0)
                for f in range(10)]
        chunks = chunk_segmentation(FrameLabels.from_rows(rows, 10, 2))
        assert [(c.start, c.end) for c in chunks] == [(0, 5), (5, 10)]

    def test_silence(self):
        assert chunk_segmentation(self._labels([], 12)) == [Chunk(0, 12)]

    def test_partition(self, rng):
        labels = random_labels(rng, 30, 2)
        chunks = chunk_segmentation(labels)
        assert chunks[0].start == 0 and chunks[-1].end == 30
        assert all(a.end == b.start for a, b in zip(chunks, chunks[1:]))


class TestPitLosses:
    """Test suite for tPIT / cPIT against exhaustive enumeration."""

    @pytest.mark.parametrize("n_tracks", [2, 3])
    def test_matches_enumeration(self, rng, n_tracks):
        for _ in range(100):
            labels = random_labels(rng, 6, n_tracks)
            sed, doa = random_prediction(rng, 6, n_tracks)
            tpit = tpit_loss(t64(sed), t64(doa), labels).item()
            cpit = cpit_loss(t64(sed), t64(doa), labels).item()
            assert tpit == pytest.approx(enumerated(sed, doa, labels), abs=1e-12)
            assert cpit == pytest.approx(enumerated(sed, doa, labels, chunked=True), abs=1e-12)
            assert cpit >= tpit - 1e-10

    def test_relabelling_is_bit_invariant(self, rng):
        for _ in range(20):
            labels = random_labels(rng, 8, 3)
            sed, doa = random_prediction(rng, 8, 3)
            perms = [list(rng.permutation(3)) for _ in range(8)]
            swapped = labels.permuted(perms)
            assert tpit_loss(t64(sed), t64(doa), swapped).item() == tpit_loss(t64(sed), t64(doa), labels).item()

    def test_chunk_relabelling_is_bit_invariant(self, rng):
        labels = random_labels(rng, 10, 2)
        sed, doa = random_prediction(rng, 10, 2)
        perms = []
        for chunk in chunk_segmentation(labels):
            perm = list(rng.permutation(2))
            perms.extend([perm] * chunk.n_frames)
        swapped = labels.permuted(perms)
        assert cpit_loss(t64(sed), t64(doa), swapped).item() == cpit_loss(t64(sed), t64(doa), labels).item()

    def test_chunk_constraint_costs_more(self):
        rows = [LabelRow(frame=f, class_index=c, track=c, azimuth=90 * c, elevation=0)
                for f in range(2) for c in range(2)]
        labels = FrameLabels.from_rows(rows, 2, 2)
        sed = np.full((2, 2, K), 0.05)
        doa = np.zeros((2, 2, 3))
        sed[0, 0, 0] = sed[0, 1, 1] = 0.95
        sed[1, 0, 1] = sed[1, 1, 0] = 0.95
        doa[0, 0], doa[0, 1] = (1, 0, 0), (0, 1, 0)
        doa[1, 0], doa[1, 1] = (0, 1, 0), (1, 0, 0)
        tpit = tpit_loss(t64(sed), t64(doa), labels).item()
        cpit = cpit_loss(t64(sed), t64(doa), labels).item()
        assert cpit > tpit
        assert cpit == pytest.approx(enumerated(sed, doa, labels, chunked=True), abs=1e-12)

    def test_single_chunk_same_optimum(self, rng):
        rows = [LabelRow(frame=f, class_index=1, track=0, azimuth=0, elevation=0) for f in range(4)]
        labels = FrameLabels.from_rows(rows, 4, 2)
        sed = np.full((4, 2, K), 0.1)
        sed[:, 0, 1] = 0.9
        doa = np.zeros((4, 2, 3))
        doa[:, 0] = (0.9, 0.0, 0.1)
        assert cpit_loss(t64(sed), t64(doa), labels).item() == tpit_loss(t64(sed), t64(doa), labels).item()

    def test_silent_clip(self, rng):
        labels = FrameLabels.from_rows([], 5, 2)
        sed, doa = random_prediction(rng, 5, 2)
        expected = np.mean(np.sum(np.mean(-np.log(1 - sed), axis=2), axis=1))
        assert cpit_loss(t64(sed), t64(doa), labels).item() == pytest.approx(expected, abs=1e-12)

    def test_fixed_is_upper_bound(self, rng):
        labels = random_labels(rng, 8, 2)
        sed, doa = random_prediction(rng, 8, 2)
        fixed = pit_loss(t64(sed), t64(doa), labels, "fixed").item()
        assert tpit_loss(t64(sed), t64(doa), labels).item() <= fixed + 1e-12

    def test_inactive_tracks_pass_no_doa_gradient(self, rng):
        labels = FrameLabels.from_rows([], 3, 2)
        sed, doa = random_prediction(rng, 3, 2)
        doa_t = t64(doa, requires_grad=True)
        tpit_loss(t64(sed), doa_t, labels).backward()
        assert doa_t.grad is None or not np.any(doa_t.grad)

    def test_batched_equals_mean_of_examples(self, rng):
        labels = [random_labels(rng, 4, 2) for _ in range(3)]
        preds = [random_prediction(rng, 4, 2) for _ in range(3)]
        single = [tpit_loss(t64(s), t64(d), l).item() for (s, d), l in zip(preds, labels)]
        batched = tpit_loss(t64(np.stack([p[0] for p in preds])), t64(np.stack([p[1] for p in preds])), labels)
        assert batched.item() == pytest.approx(np.mean(single), abs=1e-12)

    def test_task_and_beta(self, rng):
        labels = random_labels(rng, 4, 2)
        sed, doa = random_prediction(rng, 4, 2)
        cost = pairwise_costs(t64(sed), t64(doa), labels, beta=2.0).data
        sed_only = pairwise_costs(t64(sed), t64(doa), labels, task="sed").data
        doa_only = pairwise_costs(t64(sed), t64(doa), labels, task="doa").data
        np.testing.assert_allclose(cost, sed_only + 2.0 * doa_only, atol=1e-12)

    def test_frame_mismatch(self, rng):
        sed, doa = random_prediction(rng, 4, 2)
        with pytest.raises(DimensionError):
            tpit_loss(t64(sed), t64(doa), random_labels(rng, 5, 2))

    def test_unknown_task(self, rng):
        sed, doa = random_prediction(rng, 4, 2)
        with pytest.raises(ConfigError):
            pairwise_costs(t64(sed), t64(doa), random_labels(rng, 4, 2), task="both")


class TestSeldnetLoss:
    """Test suite for the class-wise loss."""

    def test_lowest_track_sets_direction(self):
        rows = [LabelRow(frame=0, class_index=2, track=0, azimuth=0, elevation=0),
                LabelRow(frame=0, class_index=2, track=1, azimuth=90, elevation=0)]
        labels = FrameLabels.from_rows(rows, 1, 2)
        sed = np.full((1, K), 0.5)
        doa = np.zeros((1, K, 3))
        doa[0, 2] = (1, 0, 0)
        assert seldnet_loss(t64(sed), t64(doa), labels, task="doa").item() == pytest.approx(0.0, abs=1e-15)

    def test_inactive_classes_have_no_doa_cost(self, rng):
        labels = FrameLabels.from_rows([], 3, 2)
        doa = rng.uniform(-1, 1, (3, K, 3))
        assert seldnet_loss(t64(np.full((3, K), 0.5)), t64(doa), labels, task="doa").item() == 0.0

    def test_compute_loss_dispatch(self, rng):
        labels = random_labels(rng, 4, 2)
        sed, doa = random_prediction(rng, 4, 2)
        config = LossConfig(method="cpit", beta=0.5)
        assert compute_loss(t64(sed), t64(doa), labels, config).item() == \
            cpit_loss(t64(sed), t64(doa), labels, beta=0.5).item()
        sed_k = rng.uniform(0.05, 0.95, (4, K))
        doa_k = rng.uniform(-1, 1, (4, K, 3))
        assert compute_loss(t64(sed_k), t64(doa_k), labels, config, "seldnet").item() == \
            seldnet_loss(t64(sed_k), t64(doa_k), labels, beta=0.5).item()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
