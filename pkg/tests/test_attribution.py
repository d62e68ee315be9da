"""Retrieval, prediction, and attribution against the brute-force oracle."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import random_instance
from oracle import cosine_distance_ref, knn_ref, mode_ref

from ebe.attribution import (
    Neighbor,
    QueryBatch,
    attribute,
    attribution_to_json,
    batch_attribute,
    cosine_distance,
    predict,
    top_k,
)
from ebe.errors import ParamError, ShapeError
from ebe.evaluation import SyntheticSpec, generate_synthetic
from ebe.store import EmbeddingMatrix, LabelVector, normalize


def small_index(values, labels=None, num_classes=4):
    values = np.asarray(values, dtype=np.float32)
    n = values.shape[0]
    labels = np.asarray(
        labels if labels is not None else np.zeros(n), dtype=np.int64
    )
    return normalize(
        EmbeddingMatrix(values=values),
        LabelVector(labels=labels, num_classes=num_classes),
    )


class TestCosineDistance:
    def test_identical_vectors(self):
        assert cosine_distance([1.0, 0.0], [1.0, 0.0]) == 0.0

    def test_orthogonal_vectors(self):
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_forty_five_degrees(self):
        # frozen from the high-precision value of 1 - 1/sqrt(2)
        assert cosine_distance([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
            0.29289321881345254, abs=1e-12
        )

    def test_opposite_vectors(self):
        assert cosine_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0, abs=1e-12)

    def test_zero_vector_convention(self):
        assert cosine_distance([0.0, 0.0], [1.0, 1.0]) == 1.0
        assert cosine_distance([0.0, 0.0], [0.0, 0.0]) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            cosine_distance([1.0], [1.0, 2.0])

    def test_symmetry_range_and_self_distance(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            d = int(rng.integers(1, 16))
            a = rng.standard_normal(d)
            b = rng.standard_normal(d)
            dab = cosine_distance(a, b)
            assert dab == cosine_distance(b, a)
            assert 0.0 <= dab <= 2.0 + 1e-9
            assert cosine_distance(a, a) <= 1e-9

    def test_matches_oracle(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            a = rng.standard_normal(8)
            b = rng.standard_normal(8)
            assert cosine_distance(a, b) == pytest.approx(
                cosine_distance_ref(a, b), abs=1e-12
            )


class TestTopK:
    def test_self_match(self):
        rng = np.random.default_rng(30)
        values = rng.standard_normal((25, 6)).astype(np.float32)
        index = small_index(values)
        result = top_k(values[17], index, 1)
        assert result[0].train_index == 17
        assert result[0].distance <= 1e-9
        assert result[0].rank == 1

    def test_tie_broken_by_ascending_train_index(self):
        # rows 1 and 3 are identical and closest to the query
        values = [[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [0.8, 0.6], [-1.0, 0.0]]
        index = small_index(values)
        result = top_k([0.8, 0.6], index, 2)
        assert [nb.train_index for nb in result] == [1, 3]
        assert result[0].distance == result[1].distance == 0.0

    def test_matches_oracle_on_random_instance(self):
        rng = np.random.default_rng(31)
        values = rng.standard_normal((100, 16)).astype(np.float32)
        index = small_index(values)
        for _ in range(20):
            query = rng.standard_normal(16).astype(np.float32)
            got = top_k(query, index, 10)
            expected = knn_ref(values.tolist(), query.tolist(), 10)
            assert [nb.train_index for nb in got] == [i for i, _ in expected]
            for nb, (_, dist) in zip(got, expected):
                assert nb.distance == pytest.approx(dist, abs=1e-9)

    def test_k_equals_n_enumerates_all_rows(self):
        rng = np.random.default_rng(32)
        values = rng.standard_normal((12, 4)).astype(np.float32)
        index = small_index(values)
        result = top_k(values[0], index, 12)
        assert sorted(nb.train_index for nb in result) == list(range(12))
        assert [nb.rank for nb in result] == list(range(1, 13))
        dists = [nb.distance for nb in result]
        assert dists == sorted(dists)

    def test_k_out_of_range(self):
        index = small_index([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ParamError):
            top_k([1.0, 0.0], index, 0)
        with pytest.raises(ParamError):
            top_k([1.0, 0.0], index, 3)

    def test_dim_mismatch(self):
        index = small_index([[1.0, 0.0]])
        with pytest.raises(ShapeError):
            top_k([1.0, 0.0, 0.0], index, 1)

    def test_metric_is_a_closed_enumeration(self):
        index = small_index([[1.0, 0.0], [0.0, 1.0]])
        assert top_k([1.0, 0.0], index, 1, metric="cosine")[0].train_index == 0
        with pytest.raises(ParamError, match="euclidean"):
            top_k([1.0, 0.0], index, 1, metric="euclidean")

    def test_scale_invariance_of_ranking(self):
        rng = np.random.default_rng(33)
        values = rng.standard_normal((40, 8)).astype(np.float32)
        query = rng.standard_normal(8).astype(np.float32)
        base = top_k(query, small_index(values), 10)
        scales = rng.uniform(0.01, 50.0, size=40).astype(np.float32)[:, None]
        scaled = top_k(query * 7.5, small_index(values * scales), 10)
        assert [nb.train_index for nb in base] == [nb.train_index for nb in scaled]
        assert [nb.rank for nb in base] == [nb.rank for nb in scaled]

    def test_zero_query_distances_all_one(self):
        index = small_index([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        result = top_k([0.0, 0.0], index, 3)
        assert [nb.train_index for nb in result] == [0, 1, 2]
        assert all(nb.distance == 1.0 for nb in result)


class TestPredict:
    def neighbors(self, n):
        return [Neighbor(train_index=i, distance=0.1 * (i + 1), rank=i + 1)
                for i in range(n)]

    def test_strict_majority(self):
        assert predict([3, 3, 7], self.neighbors(3)) == 3

    def test_tie_goes_to_best_ranked_class(self):
        assert predict([2, 5], [Neighbor(0, 0.0, 2), Neighbor(1, 0.0, 1)]) == 5
        assert predict([5, 2], self.neighbors(2)) == 5

    def test_two_two_tie_uses_rank_one(self):
        assert predict([4, 1, 1, 4], self.neighbors(4)) == 4

    def test_singleton(self):
        assert predict([9], self.neighbors(1)) == 9

    def test_empty_rejected(self):
        with pytest.raises(ParamError):
            predict([], [])

    def test_membership_property(self):
        rng = np.random.default_rng(40)
        for _ in range(200):
            k = int(rng.integers(1, 12))
            labels = rng.integers(0, 5, size=k).tolist()
            assert predict(labels, self.neighbors(k)) in labels

    def test_agrees_with_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(300):
            k = int(rng.integers(1, 10))
            labels = rng.integers(0, 4, size=k).tolist()
            assert predict(labels, self.neighbors(k)) == mode_ref(labels)


class TestAttribute:
    def clustered_index(self):
        data = generate_synthetic(
            SyntheticSpec(num_classes=3, per_class_count=30, dims=8,
                          cluster_spread=0.15, seed=50)
        )
        return data, normalize(data.train, data.train_labels)

    def test_weights_are_uniform(self):
        data, index = self.clustered_index()
        attr = attribute(0, data.test.values[0], index, 10)
        assert attr.weights == (0.1,) * 10
        assert sum(attr.weights) == pytest.approx(1.0, abs=1e-9)

    def test_k_one_prediction_is_nearest_label(self):
        data, index = self.clustered_index()
        for qid in range(0, 90, 7):
            attr = attribute(qid, data.test.values[qid], index, 1)
            assert attr.predicted_label == attr.neighbor_labels[0]

    def test_labels_join_and_prediction_match_oracle(self):
        data, index = self.clustered_index()
        train_rows = data.train.values.tolist()
        train_labels = data.train_labels.labels.tolist()
        for qid in (0, 31, 62):
            attr = attribute(qid, data.test.values[qid], index, 5)
            expected = knn_ref(train_rows, data.test.values[qid].tolist(), 5)
            assert [nb.train_index for nb in attr.neighbors] == [i for i, _ in expected]
            assert attr.neighbor_labels == tuple(
                train_labels[i] for i, _ in expected
            )
            assert attr.predicted_label == mode_ref(list(attr.neighbor_labels))

    def test_predicted_label_among_neighbor_labels(self):
        data, index = self.clustered_index()
        for qid in range(0, 90, 11):
            attr = attribute(qid, data.test.values[qid], index, 7)
            assert attr.predicted_label in attr.neighbor_labels


class TestBatchAttribute:
    def setup_batch(self, n=80, d=12, m=64, seed=60):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((n, d)).astype(np.float32)
        labels = rng.integers(0, 4, size=n).astype(np.int64)
        index = small_index(values, labels)
        test = EmbeddingMatrix(
            values=rng.standard_normal((m, d)).astype(np.float32)
        )
        return index, test

    def test_batch_of_one_equals_single(self):
        index, test = self.setup_batch()
        batch = QueryBatch.from_matrix(test, [5])
        from_batch = batch_attribute(batch, index, 4)[0]
        single = attribute(5, test.values[5], index, 4)
        assert from_batch == single

    def test_identical_across_block_sizes(self):
        index, test = self.setup_batch()
        batch = QueryBatch.from_matrix(test)
        results = [
            batch_attribute(batch, index, 10, query_block=block)
            for block in (1, 8, 64)
        ]
        assert results[0] == results[1] == results[2]

    def test_identical_across_thread_counts(self):
        index, test = self.setup_batch()
        batch = QueryBatch.from_matrix(test)
        results = [
            batch_attribute(batch, index, 10, query_block=8, threads=t)
            for t in (1, 4, 8)
        ]
        assert results[0] == results[1] == results[2]

    def test_order_follows_query_ids(self):
        index, test = self.setup_batch()
        ids = [30, 2, 17]
        batch = QueryBatch.from_matrix(test, ids)
        attrs = batch_attribute(batch, index, 3)
        assert [a.query_id for a in attrs] == ids

    def test_matches_single_attribute_on_samples(self):
        index, test = self.setup_batch(n=300, d=16, m=50, seed=61)
        batch = QueryBatch.from_matrix(test)
        attrs = batch_attribute(batch, index, 10, query_block=16, threads=4)
        rng = np.random.default_rng(62)
        for qid in rng.choice(50, size=20, replace=False):
            assert attrs[qid] == attribute(int(qid), test.values[qid], index, 10)

    def test_bad_query_id_names_id(self):
        _, test = self.setup_batch()
        with pytest.raises(ParamError, match="99"):
            QueryBatch.from_matrix(test, [0, 99])

    def test_serialization_is_deterministic(self):
        index, test = self.setup_batch()
        batch = QueryBatch.from_matrix(test, [1, 2, 3])
        first = [attribution_to_json(a) for a in batch_attribute(batch, index, 5)]
        second = [attribution_to_json(a) for a in batch_attribute(
            batch, index, 5, query_block=2, threads=3)]
        assert first == second

    def test_json_line_shape(self):
        index, test = self.setup_batch()
        batch = QueryBatch.from_matrix(test, [4])
        line = attribution_to_json(batch_attribute(batch, index, 3)[0])
        import json

        record = json.loads(line)
        assert record["query_id"] == 4
        assert record["k"] == 3
        assert [nb["rank"] for nb in record["neighbors"]] == [1, 2, 3]
        assert all(nb["weight"] == pytest.approx(1 / 3) for nb in record["neighbors"])


class TestOracleEquivalenceSmall:
    def test_random_instances_match_exactly(self):
        rng = np.random.default_rng(70)
        for _ in range(30):
            matrix, labels, index = random_instance(rng)
            n = matrix.rows
            query = rng.standard_normal(matrix.dims).astype(np.float32)
            for k in {1, min(3, n), min(10, n), n}:
                got = top_k(query, index, k)
                expected = knn_ref(matrix.values.tolist(), query.tolist(), k)
                assert [nb.train_index for nb in got] == [i for i, _ in expected]
                assert [nb.rank for nb in got] == list(range(1, k + 1))
                for nb, (_, dist) in zip(got, expected):
                    assert abs(nb.distance - dist) <= 1e-9
