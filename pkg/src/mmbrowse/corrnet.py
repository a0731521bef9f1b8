"""Joint text/image embedding learned by a correlational autoencoder.

One hidden layer maps either view (or both) into a shared k-dimensional
space; the output layer reconstructs both views from it.  The training
objective sums the reconstruction errors of the joint, image-only, and
text-only encodings and subtracts a weighted batch correlation between the
two single-view hidden representations, so matching text and image land on
nearby points.

All gradients are derived by hand (no autodiff) and validated in the test
suite against the central finite-difference oracle in ``numerics``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .catalog import (
    IMAGE_DIM,
    TEXT_DIM,
    EncodedCatalog,
    FeatureStats,
    Vocabulary,
    encode_text,
)
from .errors import (
    ConfigError,
    DataError,
    InvalidInputError,
    ParseError,
    ShapeError,
    TrainingError,
)
from .numerics import STREAM_CORRNET, sigmoid, stream_rng

CORR_DENOM_FLOOR = 1e-8


@dataclass
class CorrNetParams:
    """Weights of the joint-embedding network.

    W, V, b form the encoder (image view, text view, shared bias); W_out,
    V_out, b_out form the decoder back to the concatenated views.
    """

    W: np.ndarray      # (k, image_dim)
    V: np.ndarray      # (k, text_dim)
    b: np.ndarray      # (k,)
    W_out: np.ndarray  # (image_dim, k)
    V_out: np.ndarray  # (text_dim, k)
    b_out: np.ndarray  # (image_dim + text_dim,)

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def image_dim(self) -> int:
        return self.W.shape[1]

    @property
    def text_dim(self) -> int:
        return self.V.shape[1]

    def validate(self) -> None:
        k, di, dt = self.k, self.image_dim, self.text_dim
        expected = {
            "W": (k, di), "V": (k, dt), "b": (k,),
            "W_out": (di, k), "V_out": (dt, k), "b_out": (di + dt,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")

    def copy(self) -> "CorrNetParams":
        return CorrNetParams(*(getattr(self, f).copy() for f in PARAM_FIELDS))


PARAM_FIELDS = ("W", "V", "b", "W_out", "V_out", "b_out")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_corrnet_params(
    k: int,
    rng: np.random.Generator,
    image_dim: int = IMAGE_DIM,
    text_dim: int = TEXT_DIM,
) -> CorrNetParams:
    """Scaled-uniform weight init, zero biases."""
    return CorrNetParams(
        W=glorot_uniform(rng, image_dim, k, (k, image_dim)),
        V=glorot_uniform(rng, text_dim, k, (k, text_dim)),
        b=np.zeros(k),
        W_out=glorot_uniform(rng, k, image_dim, (image_dim, k)),
        V_out=glorot_uniform(rng, k, text_dim, (text_dim, k)),
        b_out=np.zeros(image_dim + text_dim),
    )


@dataclass
class CorrNetTrainConfig:
    k: int = 200
    lam: float = 2.0
    learning_rate: float = 0.5
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.k < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("k and batch_size must be >= 1, epochs >= 0")


def _hidden_batch(params: CorrNetParams, X: np.ndarray | None,
                  Y: np.ndarray | None) -> np.ndarray:
    a = np.broadcast_to(params.b, (len(X) if X is not None else len(Y), params.k)).copy()
    if X is not None:
        a += X @ params.W.T
    if Y is not None:
        a += Y @ params.V.T
    return sigmoid(a)


def project(
    params: CorrNetParams,
    image: np.ndarray | None = None,
    text: np.ndarray | None = None,
) -> np.ndarray:
    """Project a query into the joint space: sigmoid(W i + V t + b).

    An absent view counts as zero, so text-only and image-only queries land
    in the same space as full products.
    """
    if image is None and text is None:
        raise InvalidInputError("at least one view must be given")
    if image is not None and np.shape(image) != (params.image_dim,):
        raise ShapeError(f"image view must have shape ({params.image_dim},)")
    if text is not None and np.shape(text) != (params.text_dim,):
        raise ShapeError(f"text view must have shape ({params.text_dim},)")
    a = params.b.copy()
    if image is not None:
        a = a + params.W @ np.asarray(image, dtype=np.float64)
    if text is not None:
        a = a + params.V @ np.asarray(text, dtype=np.float64)
    return sigmoid(a)


def reconstruct(params: CorrNetParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode a hidden vector back to (image view, text view)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.k,):
        raise ShapeError(f"hidden vector must have shape ({params.k},)")
    out = sigmoid(np.concatenate([params.W_out @ h, params.V_out @ h]) + params.b_out)
    return out[: params.image_dim], out[params.image_dim:]


def corr_term(HX: np.ndarray, HY: np.ndarray) -> float:
    """Batch correlation between the two views' hidden representations:
    centered cross-products summed over batch and coordinates, normalized
    by the centered norms (denominator floored at 1e-8)."""
    HX = np.asarray(HX, dtype=np.float64)
    HY = np.asarray(HY, dtype=np.float64)
    if HX.shape != HY.shape or HX.ndim != 2:
        raise InvalidInputError("corr_term needs two equal-shape batches")
    if HX.shape[0] < 2:
        raise InvalidInputError("corr_term needs a batch of at least 2")
    A = HX - HX.mean(axis=0)
    B = HY - HY.mean(axis=0)
    denom = np.sqrt(np.sum(A * A) * np.sum(B * B))
    return float(np.sum(A * B) / max(denom, CORR_DENOM_FLOOR))


def corrnet_loss(params: CorrNetParams, X: np.ndarray, Y: np.ndarray,
                 lam: float) -> float:
    """Training objective on a standardized batch (rows are products):
    mean squared reconstruction error of the joint, image-only and
    text-only paths, minus lam times the hidden correlation."""
    loss, _ = _loss_and_grads(params, X, Y, lam, want_grads=False)
    return loss


def _loss_and_grads(params: CorrNetParams, X: np.ndarray, Y: np.ndarray,
                    lam: float, want_grads: bool = True):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise InvalidInputError("X and Y must be batches with equal row counts")
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError("corrnet loss needs a batch of at least 2")
    di, dt = params.image_dim, params.text_dim
    Z = np.concatenate([X, Y], axis=1)
    Wc = np.concatenate([params.W_out, params.V_out], axis=0)  # (di+dt, k)

    views = {
        "z": _hidden_batch(params, X, Y),
        "x": _hidden_batch(params, X, None),
        "y": _hidden_batch(params, None, Y),
    }
    recon = {p: sigmoid(H @ Wc.T + params.b_out) for p, H in views.items()}
    d = di + dt
    mse = {p: float(np.sum((R - Z) ** 2)) / (n * d) for p, R in recon.items()}

    A = views["x"] - views["x"].mean(axis=0)
    B = views["y"] - views["y"].mean(axis=0)
    S = float(np.sum(A * B))
    Sx = float(np.sum(A * A))
    Sy = float(np.sum(B * B))
    denom = np.sqrt(Sx * Sy)
    corr = S / max(denom, CORR_DENOM_FLOOR)

    loss = mse["z"] + mse["x"] + mse["y"] - lam * corr
    if not want_grads:
        return loss, None

    grads = {f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS}
    dWc = np.zeros_like(Wc)
    g_hidden = {}
    for p, H in views.items():
        R = recon[p]
        gB = (2.0 / (n * d)) * (R - Z) * R * (1.0 - R)
        dWc += gB.T @ H
        grads["b_out"] += gB.sum(axis=0)
        g_hidden[p] = gB @ Wc

    # d(-lam*corr)/dH: centered because the correlation sees centered batches
    if denom > CORR_DENOM_FLOOR:
        gA = (B - (S / Sx) * A) / denom
        gB_ = (A - (S / Sy) * B) / denom
    else:
        gA = B / CORR_DENOM_FLOOR
        gB_ = A / CORR_DENOM_FLOOR
    g_hidden["x"] += -lam * (gA - gA.mean(axis=0))
    g_hidden["y"] += -lam * (gB_ - gB_.mean(axis=0))

    for p, H in views.items():
        gAct = g_hidden[p] * H * (1.0 - H)
        if p in ("z", "x"):
            grads["W"] += gAct.T @ X
        if p in ("z", "y"):
            grads["V"] += gAct.T @ Y
        grads["b"] += gAct.sum(axis=0)

    grads["W_out"] = dWc[:di]
    grads["V_out"] = dWc[di:]
    return loss, grads


@dataclass
class CorrNetTrainResult:
    params: CorrNetParams
    stats: FeatureStats
    losses: list[float]
    config: CorrNetTrainConfig


def train_corrnet(encoded: EncodedCatalog, config: CorrNetTrainConfig) -> CorrNetTrainResult:
    """Mini-batch gradient descent on the correlational objective.

    Standardization statistics are fitted on the given catalog and applied
    before training; the same statistics must standardize any query that is
    later projected with the returned params.
    """
    if len(encoded) < 2:
        raise InvalidInputError("training needs at least 2 products")
    stats = FeatureStats.fit(encoded)
    X = stats.standardize_image(encoded.image)
    Y = stats.standardize_text(encoded.text)

    rng = stream_rng(config.seed, STREAM_CORRNET, 0)
    params = init_corrnet_params(config.k, rng, X.shape[1], Y.shape[1])
    losses = [corrnet_loss(params, X, Y, config.lam)]
    n = X.shape[0]
    batch = min(config.batch_size, n)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - 1, batch):
            idx = perm[start: start + batch]
            if len(idx) < 2:
                continue  # the correlation term needs at least 2 rows
            loss, grads = _loss_and_grads(params, X[idx], Y[idx], config.lam)
            if not np.isfinite(loss):
                raise TrainingError(f"corrnet loss diverged at epoch {epoch}")
            epoch_losses.append(loss)
            for f in PARAM_FIELDS:
                getattr(params, f)[...] -= config.learning_rate * grads[f]
        losses.append(float(np.mean(epoch_losses)) if epoch_losses else losses[-1])
    params.validate()
    return CorrNetTrainResult(params=params, stats=stats, losses=losses, config=config)


class ProjectionSpace:
    """A trained joint space bound to a catalog: standardization stats,
    params, and the precomputed image-view projections of every product."""

    def __init__(self, params: CorrNetParams, stats: FeatureStats,
                 encoded: EncodedCatalog):
        self.params = params
        self.stats = stats
        self.ids = list(encoded.ids)
        self._row = {pid: i for i, pid in enumerate(self.ids)}
        Xs = stats.standardize_image(encoded.image)
        self.image_proj = _hidden_batch(params, Xs, None)

    @property
    def k(self) -> int:
        return self.params.k

    def project_text_tokens(self, tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
        enc = self.stats.standardize_text(encode_text(tokens, vocab))
        return project(self.params, text=enc)

    def project_image_id(self, product_id: str) -> np.ndarray:
        return self.image_proj[self.row(product_id)]

    def row(self, product_id: str) -> int:
        try:
            return self._row[product_id]
        except KeyError:
            raise DataError(f"product {product_id!r} not in projection space") from None

    def nearest_by_cosine(self, query: np.ndarray, n: int) -> list[str]:
        q = np.asarray(query, dtype=np.float64)
        qn = np.linalg.norm(q)
        norms = np.linalg.norm(self.image_proj, axis=1)
        sims = self.image_proj @ q / (np.maximum(norms, 1e-12) * max(qn, 1e-12))
        order = sorted(range(len(self.ids)), key=lambda i: (-sims[i], self.ids[i]))
        return [self.ids[i] for i in order[:n]]


def cross_modal_neighbors(
    params: CorrNetParams,
    tokens: Sequence[str],
    encoded: EncodedCatalog,
    vocab: Vocabulary,
    n: int,
    stats: FeatureStats | None = None,
) -> list[str]:
    """The n products whose image-view projections lie closest (cosine) to
    the projection of a text query."""
    space = ProjectionSpace(params, stats or FeatureStats.fit(encoded), encoded)
    return space.nearest_by_cosine(space.project_text_tokens(tokens, vocab), n)


CORRNET_MAGIC = b"MMDCORR1"


def _write_array(fh, arr: np.ndarray) -> None:
    a = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
    fh.write(a.astype("<f8").tobytes())


def _read_array(fh) -> np.ndarray:
    rows, cols = struct.unpack("<II", fh.read(8))
    return np.frombuffer(fh.read(rows * cols * 8), dtype="<f8").reshape(rows, cols).copy()


def save_corrnet(result: CorrNetTrainResult, path, metrics: dict | None = None) -> None:
    """Binary params file plus a JSON sidecar with config and metrics."""
    p = result.params
    with open(path, "wb") as fh:
        fh.write(CORRNET_MAGIC)
        fh.write(struct.pack("<III", p.k, p.image_dim, p.text_dim))
        for f in PARAM_FIELDS:
            _write_array(fh, getattr(p, f))
        for arr in (result.stats.image_mean, result.stats.image_std,
                    result.stats.text_mean, result.stats.text_std):
            _write_array(fh, arr)
    sidecar = {
        "config": asdict(result.config),
        "metrics": dict(metrics or {}),
        "loss_initial": result.losses[0] if result.losses else None,
        "loss_final": result.losses[-1] if result.losses else None,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_corrnet(path) -> tuple[CorrNetParams, FeatureStats]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CORRNET_MAGIC))
        if magic != CORRNET_MAGIC:
            raise ParseError(f"bad corrnet file header {magic!r}")
        k, di, dt = struct.unpack("<III", fh.read(12))
        arrays = {f: _read_array(fh) for f in PARAM_FIELDS}
        stats_arrays = [_read_array(fh).ravel() for _ in range(4)]
    params = CorrNetParams(
        W=arrays["W"], V=arrays["V"], b=arrays["b"].ravel(),
        W_out=arrays["W_out"], V_out=arrays["V_out"], b_out=arrays["b_out"].ravel(),
    )
    if (params.k, params.image_dim, params.text_dim) != (k, di, dt):
        raise ParseError("corrnet header dims disagree with stored arrays")
    params.validate()
    stats = FeatureStats(*stats_arrays)
    return params, stats
