import numpy as np
import pytest
from sklearn.base import clone

from discern.embeddings import EmbeddingMatrix
from discern.quantizer import (
    Codebook,
    QuantizerError,
    QuantizerModel,
    ResidualKMeansQuantizer,
    assign_semantic_ids,
    codebook_coverage,
    load_model,
    load_sid_map,
    save_model,
    save_sid_map,
    sid_map_digest,
    train_residual_kmeans,
)


def matrix_from(rows, ids=None):
    rows = np.asarray(rows, dtype=np.float32)
    ids = ids or [f"v{i}" for i in range(rows.shape[0])]
    return EmbeddingMatrix(ids, rows)


def model_from_codebooks(codebooks, input_dim):
    return QuantizerModel(
        kind="residual_kmeans",
        codebooks=[Codebook(level=n + 1, codewords=cb) for n, cb in enumerate(codebooks)],
        input_dim=input_dim,
        latent_dim=input_dim,
    )


def brute_force_codes(model, embedding):
    """Independent greedy per-level nearest-codeword scan."""
    r = np.asarray(embedding, dtype=np.float64)
    codes = []
    for cb in model.codebooks:
        words = cb.codewords.astype(np.float64)
        dists = [float(((r - w) ** 2).sum()) for w in words]
        best = min(range(len(words)), key=lambda j: (dists[j], j))
        codes.append(best)
        r = r - words[best]
    return tuple(codes)


def test_exact_fit_with_k_distinct_points():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(4, 3)).astype(np.float32)
    matrix = matrix_from(points)
    model = train_residual_kmeans(matrix, n_levels=1, k=4, seed=1)
    learned = {tuple(w) for w in model.codebooks[0].codewords}
    assert learned == {tuple(p) for p in points}


def test_hand_run_two_level_fixture():
    # Lloyd's on {(0,0),(0,1),(10,0),(10,1)} with k=2 splits left/right;
    # level-2 then quantizes the ±(0,0.5) residuals exactly.
    matrix = matrix_from([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    model = train_residual_kmeans(matrix, n_levels=2, k=2, seed=0)
    level1 = {tuple(w) for w in model.codebooks[0].codewords}
    assert level1 == {(0.0, 0.5), (10.0, 0.5)}
    level2 = {tuple(w) for w in model.codebooks[1].codewords}
    assert level2 == {(0.0, -0.5), (0.0, 0.5)}
    # residuals are fully absorbed: reconstruction is exact
    for row in matrix.vectors:
        codes, residual = model.quantize_with_residual(row)
        assert np.all(residual == 0.0)


def test_same_seed_bit_identical():
    rng = np.random.default_rng(2)
    matrix = matrix_from(rng.normal(size=(50, 6)))
    a = train_residual_kmeans(matrix, n_levels=3, k=4, seed=9)
    b = train_residual_kmeans(matrix, n_levels=3, k=4, seed=9)
    for cb_a, cb_b in zip(a.codebooks, b.codebooks):
        assert cb_a.codewords.tobytes() == cb_b.codewords.tobytes()


def test_quantize_zero_residual_reserved_index():
    codebooks = [
        np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32),
        np.array([[0.0, 0.0], [5.0, 5.0]], dtype=np.float32),
    ]
    model = model_from_codebooks(codebooks, input_dim=2)
    assert model.quantize(np.array([0.0, 1.0])) == (1, 0)


def test_quantize_hand_computed_fixture():
    codebooks = [
        np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32),
        np.array([[0.1, 0.0], [0.0, 0.1]], dtype=np.float32),
    ]
    model = model_from_codebooks(codebooks, input_dim=2)
    assert model.quantize(np.array([1.05, 0.0])) == (0, 0)


def test_quantize_matches_bruteforce_oracle():
    rng = np.random.default_rng(3)
    codebooks = [rng.normal(size=(5, 4)).astype(np.float32) for _ in range(3)]
    model = model_from_codebooks(codebooks, input_dim=4)
    for _ in range(50):
        e = rng.normal(size=4)
        assert model.quantize(e) == brute_force_codes(model, e)


def test_quantize_ties_take_lowest_index():
    codebooks = [np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)]
    model = model_from_codebooks(codebooks, input_dim=2)
    assert model.quantize(np.array([1.0, 0.0])) == (0,)


def test_quantize_rejects_non_finite():
    model = model_from_codebooks([np.eye(2, dtype=np.float32)], input_dim=2)
    with pytest.raises(QuantizerError, match="non-finite"):
        model.quantize(np.array([np.nan, 0.0]))


def test_greedy_per_level_optimality_and_reconstruction_identity():
    rng = np.random.default_rng(4)
    matrix = matrix_from(rng.normal(size=(30, 5)))
    model = train_residual_kmeans(matrix, n_levels=3, k=4, seed=5)
    for row in matrix.vectors:
        codes, residual = model.quantize_with_residual(row)
        # greedy optimality per level
        assert codes == brute_force_codes(model, row)
        # e - sum of chosen codewords equals the final residual exactly
        r = row.astype(np.float64)
        for level, code in enumerate(codes):
            r = r - model.codebooks[level].codewords.astype(np.float64)[code]
        assert np.array_equal(r, residual)


def test_batch_transform_matches_single():
    rng = np.random.default_rng(5)
    matrix = matrix_from(rng.normal(size=(20, 4)))
    model = train_residual_kmeans(matrix, n_levels=2, k=3, seed=6)
    batch = model.transform(matrix.vectors)
    for i, row in enumerate(matrix.vectors):
        assert tuple(batch[i]) == model.quantize(row)


def test_assign_semantic_ids_no_collisions():
    rng = np.random.default_rng(6)
    matrix = matrix_from(rng.normal(size=(12, 6)))
    model = train_residual_kmeans(matrix, n_levels=2, k=4, seed=7)
    sid_map = assign_semantic_ids(model, matrix)
    pairs = {(sid.codes, sid.disambiguator) for sid in sid_map.values()}
    assert len(pairs) == len(matrix)  # injective
    if all(sid.disambiguator == 0 for sid in sid_map.values()):
        assert len({sid.codes for sid in sid_map.values()}) == len(matrix)


def test_assign_semantic_ids_collision_order():
    codebooks = [np.array([[0.0, 0.0], [10.0, 10.0]], dtype=np.float32)]
    model = model_from_codebooks(codebooks, input_dim=2)
    matrix = matrix_from(
        [[0.1, 0.0], [0.0, 0.1], [0.1, 0.1]],
        ids=["charlie", "alpha", "bravo"],
    )
    sid_map = assign_semantic_ids(model, matrix)
    assert sid_map["alpha"].disambiguator == 0
    assert sid_map["bravo"].disambiguator == 1
    assert sid_map["charlie"].disambiguator == 2
    assert all(sid.codes == (0,) for sid in sid_map.values())


def test_coverage_single_point_corpus():
    codebooks = [np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], dtype=np.float32)]
    model = model_from_codebooks(codebooks, input_dim=2)
    matrix = matrix_from([[0.0, 0.0]])
    assert codebook_coverage(model, matrix).tolist() == [1 / 3]


def test_coverage_exact_fit_is_one():
    rng = np.random.default_rng(7)
    points = rng.normal(size=(6, 3)).astype(np.float32) * 10
    matrix = matrix_from(points)
    model = train_residual_kmeans(matrix, n_levels=1, k=6, seed=8)
    assert codebook_coverage(model, matrix).tolist() == [1.0]


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    matrix = matrix_from(rng.normal(size=(25, 5)))
    model = train_residual_kmeans(matrix, n_levels=2, k=3, seed=11)
    path = tmp_path / "model.pdrq"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.kind == model.kind
    assert loaded.digest() == model.digest()
    for row in matrix.vectors[:5]:
        assert loaded.quantize(row) == model.quantize(row)
    # byte-identical rewrite
    save_model(loaded, tmp_path / "model2.pdrq")
    assert (tmp_path / "model2.pdrq").read_bytes() == path.read_bytes()


def test_sid_map_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    matrix = matrix_from(rng.normal(size=(10, 4)))
    model = train_residual_kmeans(matrix, n_levels=2, k=3, seed=12)
    sid_map = assign_semantic_ids(model, matrix)
    path = tmp_path / "sids.tsv"
    save_sid_map(sid_map, path, model_digest=model.digest())
    loaded, digest = load_sid_map(path)
    assert digest == model.digest()
    assert loaded == sid_map
    assert sid_map_digest(loaded) == sid_map_digest(sid_map)


def test_estimator_api():
    est = ResidualKMeansQuantizer(n_levels=2, n_codes=3, seed=1)
    assert est.get_params()["n_codes"] == 3
    cloned = clone(est)
    rng = np.random.default_rng(10)
    X = rng.normal(size=(15, 4))
    codes = est.fit(X).transform(X)
    assert codes.shape == (15, 2)
    codes2 = cloned.fit(X).transform(X)
    assert np.array_equal(codes, codes2)


def test_estimator_requires_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ResidualKMeansQuantizer().transform(np.zeros((2, 2)))


def test_train_requires_enough_rows():
    matrix = matrix_from(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(QuantizerError, match="at least"):
        train_residual_kmeans(matrix, n_levels=1, k=5)
