"""Residual-quantized autoencoder trained with straight-through gradients.

The network is a plain numpy MLP so that training is single-threaded,
seed-deterministic, and its gradients can be checked against central finite
differences. Encoder blocks are linear -> layer norm -> ReLU -> dropout
with a residual skip around each block (identity when the widths match,
a learned projection otherwise); the decoder mirrors the encoder back up
to the input width. The latent is quantized by a multi-level residual
nearest-codeword scan; gradients pass straight through the quantizer to
the encoder, codewords are pulled toward the residuals they absorb, and a
commitment term keeps the encoder close to the codebooks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_LN_EPS = 1e-5
_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def nearest_codeword(rows: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest codeword per row, ties to the lowest index.

    Distances are exact elementwise squared Euclidean in float64, chunked to
    bound memory; single-row and batch calls agree bit-for-bit.
    """
    rows = np.asarray(rows, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    k, d = codebook.shape
    chunk = max(1, (1 << 22) // max(k * d, 1))
    out = np.empty(rows.shape[0], dtype=np.int64)
    for start in range(0, rows.shape[0], chunk):
        block = rows[start : start + chunk]
        d2 = ((block[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = d2.argmin(axis=1)
    return out


class _Block:
    """linear -> layernorm -> ReLU -> dropout, with a residual skip."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in = d_in
        self.d_out = d_out
        self.W = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        self.b = np.zeros(d_out)
        self.gamma = np.ones(d_out)
        self.beta = np.zeros(d_out)
        # projected skip only when the widths differ
        self.P = None if d_in == d_out else rng.normal(0.0, np.sqrt(1.0 / d_in), size=(d_out, d_in))

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.W": self.W, f"{prefix}.b": self.b, f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}
        if self.P is not None:
            out[f"{prefix}.P"] = self.P
        return out

    def forward(self, x: np.ndarray, dropout: float, rng: np.random.Generator | None):
        h = x @ self.W.T + self.b
        mu = h.mean(axis=-1, keepdims=True)
        xc = h - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat = xc * inv
        ln = self.gamma * xhat + self.beta
        relu_mask = ln > 0
        a = np.where(relu_mask, ln, 0.0)
        if dropout > 0.0 and rng is not None:
            keep = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * keep
        else:
            keep = None
        skip = x if self.P is None else x @ self.P.T
        out = skip + a
        cache = (x, xhat, inv, relu_mask, keep)
        return out, cache

    def backward(self, dout: np.ndarray, cache) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x, xhat, inv, relu_mask, keep = cache
        da = dout * keep if keep is not None else dout
        dln = np.where(relu_mask, da, 0.0)
        dgamma = (dln * xhat).sum(axis=0)
        dbeta = dln.sum(axis=0)
        dxhat = dln * self.gamma
        dh = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dW = dh.T @ x
        db = dh.sum(axis=0)
        dx = dh @ self.W
        grads = {"W": dW, "b": db, "gamma": dgamma, "beta": dbeta}
        if self.P is None:
            dx = dx + dout
        else:
            grads["P"] = dout.T @ x
            dx = dx + dout @ self.P
        return dx, grads


@dataclass
class RqVaeConfig:
    widths: tuple[int, ...] = (768, 512, 256, 128)
    n_levels: int = 3
    k: int = 256
    dropout: float = 0.1
    weight_decay: float = 1e-2
    commitment_beta: float = 0.25
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    coverage_floor: float = 0.0

    def __post_init__(self):
        if list(self.widths) != sorted(self.widths, reverse=True):
            raise ValueError("encoder widths must be descending")
        if self.n_levels < 1 or self.k < 2:
            raise ValueError("need n_levels >= 1 and k >= 2")


class RqVaeNetwork:
    """Encoder, residual-quantized bottleneck, and mirrored decoder."""

    def __init__(self, d_in: int, config: RqVaeConfig):
        self.d_in = d_in
        self.config = config
        rng = np.random.default_rng(config.seed)
        enc_dims = [d_in, *config.widths]
        dec_dims = [config.widths[-1], *reversed(config.widths[:-1]), d_in]
        self.encoder = [_Block(enc_dims[i], enc_dims[i + 1], rng) for i in range(len(enc_dims) - 1)]
        self.decoder = [_Block(dec_dims[i], dec_dims[i + 1], rng) for i in range(len(dec_dims) - 1)]
        self.codebooks = [np.zeros((config.k, config.widths[-1])) for _ in range(config.n_levels)]
        self.training_curve: list[float] = []
        self.reconstruction_curve: list[float] = []

    @property
    def latent_dim(self) -> int:
        return self.config.widths[-1]

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, blk in enumerate(self.encoder):
            out.update(blk.params(f"enc{i}"))
        for i, blk in enumerate(self.decoder):
            out.update(blk.params(f"dec{i}"))
        for n, cb in enumerate(self.codebooks):
            out[f"codebook{n}"] = cb
        return out

    def encode(self, x: np.ndarray, dropout_rng: np.random.Generator | None = None):
        """Latent for ``x``; dropout active only when a rng is supplied."""
        h = np.asarray(x, dtype=np.float64)
        caches = []
        p = self.config.dropout if dropout_rng is not None else 0.0
        for blk in self.encoder:
            h, cache = blk.forward(h, p, dropout_rng)
            caches.append(cache)
        return h, caches

    def decode(self, z: np.ndarray, dropout_rng: np.random.Generator | None = None):
        h = z
        caches = []
        p = self.config.dropout if dropout_rng is not None else 0.0
        for blk in self.decoder:
            h, cache = blk.forward(h, p, dropout_rng)
            caches.append(cache)
        return h, caches

    def quantize_latent(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """Greedy per-level nearest codeword. Returns (codes, quantized sum,
        residuals r_2..r_{N+1}); ties go to the lowest index."""
        r = np.asarray(z, dtype=np.float64)
        codes = np.empty((r.shape[0], self.config.n_levels), dtype=np.int64)
        total = np.zeros_like(r)
        residuals = []
        for n, cb in enumerate(self.codebooks):
            idx = nearest_codeword(r, cb)
            codes[:, n] = idx
            total = total + cb[idx]
            r = r - cb[idx]
            residuals.append(r.copy())
        return codes, total, residuals

    def reconstruct(self, x: np.ndarray, bypass_quantizer: bool = False) -> np.ndarray:
        z, _ = self.encode(x)
        if bypass_quantizer:
            zq = z
        else:
            _, zq, _ = self.quantize_latent(z)
        xhat, _ = self.decode(zq)
        return xhat

    def reconstruction_error(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        xhat = self.reconstruct(x)
        return float(((xhat - x) ** 2).sum(axis=1).mean())

    def loss_and_grads(
        self,
        x: np.ndarray,
        dropout_rng: np.random.Generator | None = None,
        bypass_quantizer: bool = False,
        reconstruction_only: bool = False,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Total training loss and analytic gradients for one batch.

        With ``bypass_quantizer`` the latent feeds the decoder directly, which
        makes the reconstruction path a smooth function of every encoder and
        decoder parameter (this is the configuration the finite-difference
        check exercises; the straight-through estimator is not itself a
        derivative, so it cannot be compared against finite differences).
        """
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0]
        z, enc_caches = self.encode(x, dropout_rng)
        if bypass_quantizer:
            zq = z
            codes, residuals = None, []
        else:
            codes, total, residuals = self.quantize_latent(z)
            zq = total
        xhat, dec_caches = self.decode(zq, dropout_rng)

        diff = xhat - x
        loss_rec = float((diff * diff).sum(axis=1).mean())
        quant_sq = 0.0
        for r in residuals:
            quant_sq += float((r * r).sum(axis=1).mean())
        beta = self.config.commitment_beta
        if reconstruction_only:
            loss = loss_rec
        else:
            loss = loss_rec + (1.0 + beta) * quant_sq  # codebook + commitment terms share the value

        grads: dict[str, np.ndarray] = {}
        dxhat = 2.0 * diff / batch
        dz = dxhat
        for i in reversed(range(len(self.decoder))):
            dz, g = self.decoder[i].backward(dz, dec_caches[i])
            for key, val in g.items():
                grads[f"dec{i}.{key}"] = val
        # straight-through: decoder-input gradient reaches the latent as-is

        if not bypass_quantizer and not reconstruction_only:
            # codebook pull toward the residual each codeword absorbed
            for n, cb in enumerate(self.codebooks):
                g = np.zeros_like(cb)
                r_in = residuals[n] + cb[codes[:, n]]  # level input = r_{n+1} + chosen codeword
                np.add.at(g, codes[:, n], (2.0 / batch) * (cb[codes[:, n]] - r_in))
                grads[f"codebook{n}"] = g
            # commitment pulls the encoder toward the chosen codewords
            for r in residuals:
                dz = dz + (2.0 * beta / batch) * r
        elif not bypass_quantizer:
            for n, cb in enumerate(self.codebooks):
                grads[f"codebook{n}"] = np.zeros_like(cb)

        for i in reversed(range(len(self.encoder))):
            dz, g = self.encoder[i].backward(dz, enc_caches[i])
            for key, val in g.items():
                grads[f"enc{i}.{key}"] = val
        return loss, grads

    def init_codebooks_from_data(self, x: np.ndarray, rng: np.random.Generator) -> None:
        """Seed each level's codebook with residuals observed on the data."""
        z, _ = self.encode(x)
        r = z
        n_rows = r.shape[0]
        for n in range(self.config.n_levels):
            idx = rng.choice(n_rows, size=self.config.k, replace=n_rows < self.config.k)
            self.codebooks[n][:] = r[idx]
            assign = nearest_codeword(r, self.codebooks[n])
            r = r - self.codebooks[n][assign]


@dataclass
class _AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: _AdamState, lr: float, weight_decay: float) -> None:
    state.t += 1
    bias1 = 1.0 - _ADAM_B1**state.t
    bias2 = 1.0 - _ADAM_B2**state.t
    for name, p in params.items():
        if name not in grads:
            continue
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= _ADAM_B1
        m += (1.0 - _ADAM_B1) * g
        v *= _ADAM_B2
        v += (1.0 - _ADAM_B2) * g * g
        step = lr * (m / bias1) / (np.sqrt(v / bias2) + _ADAM_EPS)
        p -= step
        # decoupled decay on weight matrices only; norms, biases and
        # codebooks stay undecayed
        if weight_decay > 0.0 and (name.endswith(".W") or name.endswith(".P")):
            p -= lr * weight_decay * p


def train_network(x: np.ndarray, config: RqVaeConfig) -> RqVaeNetwork:
    """Fit an RqVaeNetwork on (already standardized) rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    net = RqVaeNetwork(x.shape[1], config)
    rng = np.random.default_rng(config.seed + 1)
    dropout_rng = np.random.default_rng(config.seed + 2)
    net.init_codebooks_from_data(x, rng)
    net.reconstruction_curve.append(net.reconstruction_error(x))

    state = _AdamState()
    n = x.shape[0]
    params = net.parameters()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            batch = x[order[start : start + config.batch_size]]
            # divergence shows up as overflow to inf/nan; detect it via the
            # finiteness check instead of emitting numpy warnings
            with np.errstate(all="ignore"):
                loss, grads = net.loss_and_grads(
                    batch, dropout_rng=dropout_rng if config.dropout > 0 else None
                )
                if not np.isfinite(loss):
                    raise DivergenceError(epoch)
                _adamw_step(params, grads, state, config.lr, config.weight_decay)
            epoch_loss += loss
            batches += 1
        net.training_curve.append(epoch_loss / max(batches, 1))
        with np.errstate(all="ignore"):
            net.reconstruction_curve.append(net.reconstruction_error(x))
    return net


def finite_difference_grads(
    net: RqVaeNetwork,
    x: np.ndarray,
    entries: list[tuple[str, int]],
    h: float = 1e-6,
    bypass_quantizer: bool = True,
) -> dict[tuple[str, int], float]:
    """Central finite differences of the reconstruction loss for selected
    flat parameter entries."""
    params = net.parameters()
    out: dict[tuple[str, int], float] = {}
    for name, flat_idx in entries:
        p = params[name]
        orig = p.flat[flat_idx]
        p.flat[flat_idx] = orig + h
        up, _ = net.loss_and_grads(x, bypass_quantizer=bypass_quantizer, reconstruction_only=True)
        p.flat[flat_idx] = orig - h
        down, _ = net.loss_and_grads(x, bypass_quantizer=bypass_quantizer, reconstruction_only=True)
        p.flat[flat_idx] = orig
        out[(name, flat_idx)] = (up - down) / (2.0 * h)
    return out
