"""Stacked denoising autoencoder with growable hidden levels.

Samples are rows. A layer maps ``x -> s(x @ W.T + b)`` with ``W`` stored as
``(out_dim, in_dim)``. ``decoders[i]`` mirrors ``encoders[i]``, so decoding
from level ``L`` applies ``decoders[L-1], ..., decoders[0]``.

Reconstruction error is the squared error summed over input pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EmptyInputError, LevelError, ShapeError

log = logging.getLogger(__name__)

NEW_NODE_INIT_SCALE = 0.01


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation != "sigmoid":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"layer expects width {self.in_dim}, got {x.shape[-1]}")
        return expit(x @ self.weights.T + self.bias)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)

    @classmethod
    def glorot(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim))


@dataclass
class StackedAutoencoder:
    encoders: list[DenseLayer]
    decoders: list[DenseLayer]

    def __post_init__(self):
        if len(self.encoders) != len(self.decoders) or not self.encoders:
            raise ShapeError("need the same non-zero number of encode and decode layers")
        self.check()

    @classmethod
    def random(cls, widths: list[int], rng: np.random.Generator) -> "StackedAutoencoder":
        """``widths`` is ``[input_dim, w_1, ..., w_N]``."""
        if len(widths) < 2:
            raise ShapeError("widths must include the input dimension and at least one level")
        encoders, decoders = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            encoders.append(DenseLayer.glorot(fan_in, fan_out, rng))
            decoders.append(DenseLayer.glorot(fan_out, fan_in, rng))
        return cls(encoders, decoders)

    @property
    def depth(self) -> int:
        return len(self.encoders)

    @property
    def input_dim(self) -> int:
        return self.encoders[0].in_dim

    @property
    def widths(self) -> list[int]:
        """Hidden widths of levels 1..N."""
        return [layer.out_dim for layer in self.encoders]

    @property
    def code_width(self) -> int:
        return self.encoders[-1].out_dim

    def check(self) -> None:
        """Raise ShapeError unless the encode/decode width chain is consistent."""
        upstream = self.input_dim
        for i, (enc, dec) in enumerate(zip(self.encoders, self.decoders), start=1):
            if enc.in_dim != upstream:
                raise ShapeError(f"encoder {i} expects {enc.in_dim} inputs, upstream is {upstream}")
            if dec.in_dim != enc.out_dim or dec.out_dim != enc.in_dim:
                raise ShapeError(f"decoder {i} does not mirror encoder {i}")
            upstream = enc.out_dim

    def copy(self) -> "StackedAutoencoder":
        return StackedAutoencoder(
            [layer.copy() for layer in self.encoders], [layer.copy() for layer in self.decoders]
        )

    def level(self, L: int) -> tuple[DenseLayer, DenseLayer]:
        """The (encoder, decoder) pair forming the SHL-AE of level ``L``."""
        self._check_level(L)
        return self.encoders[L - 1], self.decoders[L - 1]

    def _check_level(self, L: int, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        if not low <= L <= self.depth:
            raise LevelError(f"level {L} outside {low}..{self.depth}")


def _as_rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"expected a vector or a matrix of rows, got shape {x.shape}")
    return x, False


def encode_to_level(ae: StackedAutoencoder, x, L: int, allow_zero: bool = False) -> np.ndarray:
    """Apply encoders 1..L. ``L = 0`` (with ``allow_zero``) returns the input."""
    ae._check_level(L, allow_zero=allow_zero)
    rows, single = _as_rows(x)
    if rows.shape[1] != ae.input_dim:
        raise ShapeError(f"input width {rows.shape[1]} != model input {ae.input_dim}")
    for layer in ae.encoders[:L]:
        rows = layer.forward(rows)
    return rows[0] if single else rows


def decode_from_level(ae: StackedAutoencoder, y, L: int) -> np.ndarray:
    """Apply the L decoders mirroring encoders L..1, ending in input space."""
    ae._check_level(L)
    rows, single = _as_rows(y)
    if rows.shape[1] != ae.encoders[L - 1].out_dim:
        raise ShapeError(
            f"code width {rows.shape[1]} != level {L} width {ae.encoders[L - 1].out_dim}"
        )
    for layer in reversed(ae.decoders[:L]):
        rows = layer.forward(rows)
    return rows[0] if single else rows


def reconstruct(ae: StackedAutoencoder, x, L: int) -> np.ndarray:
    return decode_from_level(ae, encode_to_level(ae, x, L), L)


def reconstruction_error(ae: StackedAutoencoder, x, L: int):
    """Global RE at level L: squared error summed over pixels.

    Returns a float for a single vector and one value per row for a matrix.
    """
    rows, single = _as_rows(x)
    diff = rows - reconstruct(ae, rows, L)
    re = np.einsum("ij,ij->i", diff, diff)
    return float(re[0]) if single else re


@dataclass
class ShlGradients:
    enc_w: np.ndarray
    enc_b: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray


def shl_gradients(enc: DenseLayer, dec: DenseLayer, x_clean, x_noisy) -> ShlGradients:
    """Gradient of ``0.5 * ||x_clean - dec(enc(x_noisy))||^2``, summed over rows."""
    clean, _ = _as_rows(x_clean)
    noisy, _ = _as_rows(x_noisy)
    if clean.shape != noisy.shape:
        raise ShapeError(f"clean {clean.shape} and noisy {noisy.shape} batches differ")
    if dec.in_dim != enc.out_dim or dec.out_dim != enc.in_dim or clean.shape[1] != enc.in_dim:
        raise ShapeError("encoder, decoder and data widths are inconsistent")
    hidden = enc.forward(noisy)
    out = dec.forward(hidden)
    delta_out = (out - clean) * out * (1.0 - out)
    delta_hidden = (delta_out @ dec.weights) * hidden * (1.0 - hidden)
    return ShlGradients(
        enc_w=delta_hidden.T @ noisy,
        enc_b=delta_hidden.sum(axis=0),
        dec_w=delta_out.T @ hidden,
        dec_b=delta_out.sum(axis=0),
    )


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 15
    minibatch_size: int = 20
    noise_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be at least 1")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class LrMask:
    """Learning-rate multipliers per parameter group.

    "Old" and "new" split hidden nodes at the boundary passed to
    :func:`train_shl`; decoder weights are split by column (the hidden node
    they read from). When the level's inputs themselves grew (the level
    above a grown one), weights and biases attached to the new input units
    form their own groups: ``encoder_new_inputs`` for fan-in columns of old
    hidden nodes, ``decoder_new_outputs`` for decoder rows and biases that
    reconstruct the new inputs.
    """

    encoder_old: float = 1.0
    encoder_new: float = 1.0
    encoder_bias_old: float = 1.0
    encoder_bias_new: float = 1.0
    decoder_old: float = 1.0
    decoder_new: float = 1.0
    decoder_bias: float = 1.0
    encoder_new_inputs: float = 1.0
    decoder_new_outputs: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"LrMask.{name} must be finite and >= 0, got {value}")

    @classmethod
    def uniform(cls, value: float) -> "LrMask":
        return cls(*([value] * 9))


def _step(param: np.ndarray, grad: np.ndarray, rate: float) -> None:
    if rate != 0.0 and param.size:
        param -= rate * grad


def train_shl(
    enc: DenseLayer,
    dec: DenseLayer,
    data_clean,
    config: TrainConfig,
    rng: np.random.Generator,
    mask: LrMask | None = None,
    new_node_boundary: int | None = None,
    epochs: int | None = None,
    new_input_boundary: int | None = None,
) -> tuple[DenseLayer, DenseLayer]:
    """Minibatch SGD on a single-hidden-layer denoising AE, in place.

    Hidden nodes with index ``>= new_node_boundary`` count as new for the
    purposes of ``mask``; input units with index ``>= new_input_boundary``
    count as new inputs. Masking noise zeroes each input with probability
    ``config.noise_fraction``, drawn afresh for every presentation.
    """
    mask = mask or LrMask()
    data, _ = _as_rows(data_clean)
    if data.shape[0] == 0:
        log.warning("train_shl called with no data; parameters left unchanged")
        return enc, dec
    if data.shape[1] != enc.in_dim:
        raise ShapeError(f"data width {data.shape[1]} != encoder input {enc.in_dim}")
    width = enc.out_dim
    boundary = width if new_node_boundary is None else new_node_boundary
    if not 0 <= boundary <= width:
        raise ValueError(f"new_node_boundary {boundary} outside 0..{width}")
    in_boundary = enc.in_dim if new_input_boundary is None else new_input_boundary
    if not 0 <= in_boundary <= enc.in_dim:
        raise ValueError(f"new_input_boundary {in_boundary} outside 0..{enc.in_dim}")
    b, ib = boundary, in_boundary
    n = data.shape[0]
    batch = config.minibatch_size
    lr = config.learning_rate
    for _ in range(config.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            clean = data[order[start:start + batch]]
            if config.noise_fraction > 0:
                noisy = clean * (rng.random(clean.shape) >= config.noise_fraction)
            else:
                noisy = clean
            g = shl_gradients(enc, dec, clean, noisy)
            scale = lr / clean.shape[0]
            _step(enc.weights[:b, :ib], g.enc_w[:b, :ib], scale * mask.encoder_old)
            _step(enc.weights[:b, ib:], g.enc_w[:b, ib:], scale * mask.encoder_new_inputs)
            _step(enc.weights[b:], g.enc_w[b:], scale * mask.encoder_new)
            _step(enc.bias[:b], g.enc_b[:b], scale * mask.encoder_bias_old)
            _step(enc.bias[b:], g.enc_b[b:], scale * mask.encoder_bias_new)
            _step(dec.weights[:ib, :b], g.dec_w[:ib, :b], scale * mask.decoder_old)
            _step(dec.weights[:ib, b:], g.dec_w[:ib, b:], scale * mask.decoder_new)
            _step(dec.weights[ib:], g.dec_w[ib:], scale * mask.decoder_new_outputs)
            _step(dec.bias[:ib], g.dec_b[:ib], scale * mask.decoder_bias)
            _step(dec.bias[ib:], g.dec_b[ib:], scale * mask.decoder_new_outputs)
    return enc, dec


def train_level(
    ae: StackedAutoencoder,
    L: int,
    data,
    config: TrainConfig,
    rng: np.random.Generator,
    mask: LrMask | None = None,
    new_node_boundary: int | None = None,
    epochs: int | None = None,
    new_input_boundary: int | None = None,
) -> None:
    """Train level L as an SHL-AE on ``data`` encoded through levels 1..L-1."""
    enc, dec = ae.level(L)
    inputs = encode_to_level(ae, data, L - 1, allow_zero=True)
    train_shl(enc, dec, inputs, config, rng, mask, new_node_boundary, epochs, new_input_boundary)


def pretrain_stack(
    ae: StackedAutoencoder, data, config: TrainConfig, rng: np.random.Generator
) -> StackedAutoencoder:
    """Greedy layerwise training of every level, bottom-up, in place."""
    rows, _ = _as_rows(data)
    if rows.shape[1] != ae.input_dim:
        raise ShapeError(f"data width {rows.shape[1]} != model input {ae.input_dim}")
    codes = rows
    for L in range(1, ae.depth + 1):
        enc, dec = ae.level(L)
        train_shl(enc, dec, codes, config, rng)
        codes = enc.forward(codes)
        log.debug("pretrained level %d (width %d)", L, enc.out_dim)
    return ae


@dataclass
class GrowthBoundary:
    level: int
    old_width: int
    new_width: int

    @property
    def boundary(self) -> int:
        return self.old_width


def _append_rows(layer: DenseLayer, k: int, rng: np.random.Generator) -> None:
    new = rng.uniform(-NEW_NODE_INIT_SCALE, NEW_NODE_INIT_SCALE, size=(k, layer.in_dim))
    layer.weights = np.vstack([layer.weights, new])
    layer.bias = np.concatenate([layer.bias, np.zeros(k)])


def _append_cols(layer: DenseLayer, k: int, rng: np.random.Generator) -> None:
    new = rng.uniform(-NEW_NODE_INIT_SCALE, NEW_NODE_INIT_SCALE, size=(layer.out_dim, k))
    layer.weights = np.hstack([layer.weights, new])


def grow_level(ae: StackedAutoencoder, L: int, k: int, rng: np.random.Generator) -> GrowthBoundary:
    """Add ``k`` hidden nodes to level L in place.

    The level's encoder gains rows and its decoder gains columns; for
    ``L < N`` the next encoder gains fan-in columns and the next decoder
    gains output rows. Existing parameter values are copied unchanged.
    """
    ae._check_level(L)
    if k < 1:
        raise ValueError("k must be at least 1")
    enc, dec = ae.level(L)
    old = enc.out_dim
    _append_rows(enc, k, rng)
    _append_cols(dec, k, rng)
    if L < ae.depth:
        next_enc, next_dec = ae.level(L + 1)
        _append_cols(next_enc, k, rng)
        _append_rows(next_dec, k, rng)
    ae.check()
    return GrowthBoundary(level=L, old_width=old, new_width=old + k)


def mean_re_by_level(ae: StackedAutoencoder, data) -> list[float]:
    rows, _ = _as_rows(data)
    if rows.shape[0] == 0:
        raise EmptyInputError("no samples to evaluate")
    return [float(np.mean(reconstruction_error(ae, rows, L))) for L in range(1, ae.depth + 1)]
