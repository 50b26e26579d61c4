import numpy as np
import pytest

from discern.embeddings import EmbeddingMatrix
from discern.quantizer import load_model, save_model, train_rqvae
from discern.rqvae import (
    DivergenceError,
    RqVaeConfig,
    RqVaeNetwork,
    finite_difference_grads,
    train_network,
)

TOY = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, weight_decay=0.0, seed=0)


def toy_net(seed=0):
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, weight_decay=0.0, seed=seed)
    net = RqVaeNetwork(8, config)
    rng = np.random.default_rng(seed + 100)
    net.init_codebooks_from_data(rng.normal(size=(16, 8)), rng)
    return net


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_architecture_shapes():
    config = RqVaeConfig()
    net = RqVaeNetwork(768, config)
    assert net.latent_dim == 128
    assert [b.d_in for b in net.encoder] == [768, 768, 512, 256]
    assert [b.d_out for b in net.encoder] == [768, 512, 256, 128]
    assert [b.d_in for b in net.decoder] == [128, 256, 512, 768]
    assert [b.d_out for b in net.decoder] == [256, 512, 768, 768]
    # identity skip where the widths match, projected otherwise
    assert net.encoder[0].P is None and net.encoder[1].P is not None
    assert net.decoder[-1].P is None and net.decoder[0].P is not None
    assert len(net.codebooks) == 3 and net.codebooks[0].shape == (256, 128)


def test_widths_must_descend():
    with pytest.raises(ValueError, match="descending"):
        RqVaeConfig(widths=(128, 256))


def test_reconstruction_gradients_match_finite_differences():
    net = toy_net()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 8))
    _, grads = net.loss_and_grads(x, bypass_quantizer=True, reconstruction_only=True)
    names = sorted(n for n in grads if not n.startswith("codebook"))
    entries = []
    params = net.parameters()
    pick = np.random.default_rng(2)
    for _ in range(50):
        name = names[int(pick.integers(len(names)))]
        entries.append((name, int(pick.integers(params[name].size))))
    fd = finite_difference_grads(net, x, entries, bypass_quantizer=True)
    for name, idx in entries:
        analytic = grads[name].flat[idx]
        numeric = fd[(name, idx)]
        assert relative_error(analytic, numeric) < 1e-4, (name, idx, analytic, numeric)


def test_decoder_gradients_through_quantized_path():
    # codeword assignments do not depend on decoder parameters, so central
    # differences are valid for the decoder even with the quantizer active
    net = toy_net(seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 8))
    _, grads = net.loss_and_grads(x, bypass_quantizer=False, reconstruction_only=True)
    params = net.parameters()
    entries = []
    pick = np.random.default_rng(5)
    dec_names = sorted(n for n in grads if n.startswith("dec"))
    for _ in range(20):
        name = dec_names[int(pick.integers(len(dec_names)))]
        entries.append((name, int(pick.integers(params[name].size))))
    fd = finite_difference_grads(net, x, entries, bypass_quantizer=False)
    for name, idx in entries:
        assert relative_error(grads[name].flat[idx], fd[(name, idx)]) < 1e-4


def test_codebook_gradient_formula():
    # the codebook pull is 2/B * (c_k - r_n) summed over the rows assigned to k
    net = toy_net(seed=6)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(6, 8))
    z, _ = net.encode(x)
    codes, _total, residuals = net.quantize_latent(z)
    _, grads = net.loss_and_grads(x)
    batch = x.shape[0]
    for level in range(net.config.n_levels):
        expected = np.zeros_like(net.codebooks[level])
        level_input = residuals[level] + net.codebooks[level][codes[:, level]]
        for row in range(batch):
            k = codes[row, level]
            expected[k] += (2.0 / batch) * (net.codebooks[level][k] - level_input[row])
        np.testing.assert_allclose(grads[f"codebook{level}"], expected, atol=1e-12)


def test_commitment_gradient_direction():
    # with reconstruction and codebook terms fixed, the encoder gradient of
    # the commitment term is 2*beta/B * sum_n r_{n+1}
    net = toy_net(seed=8)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 8))
    z, _ = net.encode(x)
    _codes, _total, residuals = net.quantize_latent(z)
    loss_full, _ = net.loss_and_grads(x)
    loss_rec_only, _ = net.loss_and_grads(x, reconstruction_only=True)
    quant_sq = sum(float((r * r).sum(axis=1).mean()) for r in residuals)
    expected = loss_rec_only + (1.0 + net.config.commitment_beta) * quant_sq
    assert loss_full == pytest.approx(expected, rel=1e-12)


def test_training_reduces_reconstruction_error():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(64, 8))
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, epochs=15, batch_size=16, lr=1e-2, seed=0)
    net = train_network(x, config)
    assert len(net.training_curve) == 15
    assert all(np.isfinite(v) for v in net.training_curve)
    assert net.reconstruction_curve[-1] <= net.reconstruction_curve[0]


def test_training_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(32, 8))
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.1, epochs=3, batch_size=8, seed=5)
    a = train_network(x, config)
    b = train_network(x, config)
    for name, arr in a.parameters().items():
        assert np.array_equal(arr, b.parameters()[name]), name


def test_divergence_raises_with_epoch():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(32, 8)) * 10
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, epochs=50, batch_size=8, lr=1e12, seed=1)
    with pytest.raises(DivergenceError) as err:
        train_network(x, config)
    assert err.value.epoch >= 0


def test_repeated_point_corpus():
    x = np.tile([[1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, 1.5]], (32, 1))
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, epochs=60, batch_size=8, lr=1e-2, seed=2)
    net = train_network(x, config)
    assert net.reconstruction_error(x) < 0.01 * float((x[0] ** 2).sum())  # ~0 relative to the point
    z, _ = net.encode(x)
    codes, _, _ = net.quantize_latent(z)
    for level in range(2):
        assert len(np.unique(codes[:, level])) == 1  # coverage 1/K per level


def test_train_rqvae_model_surface():
    rng = np.random.default_rng(13)
    matrix = EmbeddingMatrix([f"i{n}" for n in range(48)], rng.normal(size=(48, 8)).astype(np.float32))
    config = RqVaeConfig(widths=(8, 4), n_levels=3, k=4, dropout=0.1, epochs=4, batch_size=16, seed=3)
    model = train_rqvae(matrix, config)
    assert model.kind == "rqvae"
    assert model.latent_dim == 4
    assert model.n_levels == 3 and model.k == 4
    assert model.input_standardization is not None
    codes = model.transform(matrix.vectors)
    assert codes.shape == (48, 3)
    assert codes.min() >= 0 and codes.max() < 4
    assert len(model.training_curve) == 4


def test_rqvae_model_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    matrix = EmbeddingMatrix([f"i{n}" for n in range(32)], rng.normal(size=(32, 8)).astype(np.float32))
    config = RqVaeConfig(widths=(8, 4), n_levels=2, k=4, dropout=0.0, epochs=3, batch_size=8, seed=4)
    model = train_rqvae(matrix, config)
    path = tmp_path / "model.pdrq"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.digest() == model.digest()
    assert np.array_equal(loaded.transform(matrix.vectors), model.transform(matrix.vectors))


def test_default_config_constants():
    config = RqVaeConfig()
    assert config.widths == (768, 512, 256, 128)
    assert config.n_levels == 3
    assert config.k == 256
    assert config.commitment_beta == 0.25
