"""The browsing agent: answers a dialog context by sampling from a learned
Gaussian mixture in the joint embedding space.

Per round, the context is the mean of the last few query projections.  The
mixture means and selection probabilities are functions of that context;
covariance factors are learned but context independent.  Component choice
goes through a Gumbel-Softmax relaxation and the Gaussian draw through the
reparameterization trick, so the whole sampler is differentiable and trains
by gradient descent on a negative mean-cosine objective against the
displayed ground-truth products.

Gradients are hand-derived; the test suite checks every parameter block
against central finite differences at frozen noise.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corrnet import ProjectionSpace, glorot_uniform
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    InvalidInputError,
    ParseError,
    ShapeError,
    TrainingError,
)
from .numerics import STREAM_AGENT, gumbel_noise, sigmoid, softmax, stream_rng
from .simulator import DialogSession

PI_FLOOR = 1e-12


@dataclass
class AgentHyper:
    """Hyper-parameters of the GMM sampling agent."""

    n_gaussians: int = 3
    tau: float = 1.0
    eta: float = 0.1
    window: int = 3
    n_display: int = 6
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.n_gaussians < 1:
            raise ConfigError("need at least one Gaussian")
        if self.tau <= 0:
            raise ConfigError("temperature tau must be > 0")
        if self.eta <= 0:
            raise ConfigError("learning rate eta must be > 0")
        if self.window < 1 or self.n_display < 1:
            raise ConfigError("window and n_display must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class AgentParams:
    """Learned parameters: per-Gaussian mean maps and covariance factors,
    plus the gate that scores each Gaussian from the context."""

    W_mu: np.ndarray  # (n_gaussians, k, k)
    b_mu: np.ndarray  # (n_gaussians, k)
    L: np.ndarray     # (n_gaussians, k, k)
    W_g: np.ndarray   # (n_gaussians, k)
    b_g: np.ndarray   # (n_gaussians,)

    @property
    def n_gaussians(self) -> int:
        return self.W_mu.shape[0]

    @property
    def k(self) -> int:
        return self.W_mu.shape[1]

    def validate(self) -> None:
        g, k = self.n_gaussians, self.k
        expected = {"W_mu": (g, k, k), "b_mu": (g, k), "L": (g, k, k),
                    "W_g": (g, k), "b_g": (g,)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")

    def copy(self) -> "AgentParams":
        return AgentParams(*(getattr(self, f).copy() for f in AGENT_FIELDS))


AGENT_FIELDS = ("W_mu", "b_mu", "L", "W_g", "b_g")


def init_agent_params(hyper: AgentHyper, k: int, rng: np.random.Generator) -> AgentParams:
    """Scaled-uniform init for the maps, 0.1 x identity covariance factors,
    zero biases: early samples stay near the mixture means."""
    g = hyper.n_gaussians
    W_mu = np.stack([glorot_uniform(rng, k, k, (k, k)) for _ in range(g)])
    W_g = glorot_uniform(rng, k, g, (g, k))
    L = np.stack([0.1 * np.eye(k) for _ in range(g)])
    return AgentParams(W_mu=W_mu, b_mu=np.zeros((g, k)), L=L,
                       W_g=W_g, b_g=np.zeros(g))


def context_mean(window: Sequence[np.ndarray], n_ws: int) -> np.ndarray:
    """Mean of the available query projections, newest last.

    Early rounds average fewer than n_ws vectors rather than zero-padding,
    which would drag the context toward the sigmoid midpoint.
    """
    if not 1 <= len(window) <= n_ws:
        raise InvalidInputError(
            f"window length {len(window)} not in [1, {n_ws}]"
        )
    return np.mean(np.asarray(window, dtype=np.float64), axis=0)


def gmm_head(params: AgentParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mixture means and selection probabilities for one context vector:
    mu_i = sigmoid(W_mu_i h + b_mu_i), pi = softmax(W_g h + b_g)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.k,):
        raise ShapeError(f"context must have shape ({params.k},)")
    mus = sigmoid(np.einsum("gij,j->gi", params.W_mu, h) + params.b_mu)
    pi = softmax(params.W_g @ h + params.b_g)
    return mus, pi


def gumbel_softmax(pi: np.ndarray, g: np.ndarray, tau: float) -> np.ndarray:
    """Differentiable relaxation of a categorical draw:
    w_i = exp((log pi_i + g_i) / tau) / sum_j exp((log pi_j + g_j) / tau).

    pi is floored at 1e-12 before the log so the weights stay finite.
    """
    if tau <= 0:
        raise ConfigError("temperature tau must be > 0")
    pi = np.asarray(pi, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if pi.shape != g.shape:
        raise ShapeError("pi and noise must have equal shapes")
    return softmax((np.log(np.maximum(pi, PI_FLOOR)) + g) / tau)


def sample_reparam(mus: np.ndarray, Ls: np.ndarray, w: np.ndarray,
                   eps: np.ndarray) -> np.ndarray:
    """Reparameterized mixture sample: y = sum_i w_i (mu_i + L_i eps)."""
    mus = np.asarray(mus, dtype=np.float64)
    Ls = np.asarray(Ls, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    g, k = mus.shape
    if Ls.shape != (g, k, k) or w.shape != (g,) or eps.shape != (k,):
        raise ShapeError("inconsistent shapes in sample_reparam")
    return np.einsum("g,gi->i", w, mus + np.einsum("gij,j->gi", Ls, eps))


def cosine_loss(y_hat: np.ndarray, y_true: np.ndarray) -> float:
    """Negative mean of the n_d x n_d cosine matrix between generated and
    ground-truth vectors for one round."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_hat.ndim != 2 or y_hat.shape != y_true.shape:
        raise ShapeError("cosine_loss expects two equal (n_d, k) batches")
    hn = np.linalg.norm(y_hat, axis=1)
    tn = np.linalg.norm(y_true, axis=1)
    if np.any(hn == 0.0) or np.any(tn == 0.0):
        raise DegenerateInputError("zero-norm vector in cosine loss")
    cos = (y_true / tn[:, None]) @ (y_hat / hn[:, None]).T
    return float(-np.mean(cos))


@dataclass(frozen=True)
class TrainingSample:
    """One dialog round ready for the agent: the query-projection window
    (newest last) and the projections of the 6 displayed products."""

    window: tuple[np.ndarray, ...]
    truth: np.ndarray  # (n_display, k)
    session_id: str = ""
    round_index: int = 0


@dataclass(frozen=True)
class RoundNoise:
    """Frozen stochastic inputs of one round: one independent (gumbel,
    gaussian) pair per displayed sample."""

    g: np.ndarray    # (n_display, n_gaussians)
    eps: np.ndarray  # (n_display, k)


def draw_noise(rng: np.random.Generator, n_display: int, n_gaussians: int,
               k: int) -> RoundNoise:
    return RoundNoise(
        g=gumbel_noise(rng, size=(n_display, n_gaussians)),
        eps=rng.standard_normal((n_display, k)),
    )


def _forward_batch(params: AgentParams, hyper: AgentHyper, H: np.ndarray,
                   G: np.ndarray, E: np.ndarray) -> dict:
    """Vectorized forward pass over a batch of rounds.

    H: (B, k) contexts; G: (B, n_d, n_g) gumbel noise; E: (B, n_d, k)
    gaussian noise.  Returns all intermediates needed for the backward
    pass.
    """
    a = np.einsum("gij,bj->bgi", params.W_mu, H) + params.b_mu[None]
    mu = sigmoid(a)                                      # (B, n_g, k)
    v = H @ params.W_g.T + params.b_g                    # (B, n_g)
    pi = softmax(v, axis=-1)
    pi_safe = np.maximum(pi, PI_FLOOR)
    w = softmax((np.log(pi_safe)[:, None, :] + G) / hyper.tau, axis=-1)
    comp = mu[:, None, :, :] + np.einsum("gij,bdj->bdgi", params.L, E)
    y_hat = np.einsum("bdg,bdgi->bdi", w, comp)          # (B, n_d, k)
    return {"H": H, "G": G, "E": E, "a": a, "mu": mu, "pi": pi,
            "pi_safe": pi_safe, "w": w, "comp": comp, "y_hat": y_hat}


def _loss_and_grads_batch(params: AgentParams, hyper: AgentHyper,
                          H: np.ndarray, Y: np.ndarray, G: np.ndarray,
                          E: np.ndarray, want_grads: bool = True):
    """Batched negative-mean-cosine loss and its hand-derived gradients."""
    fwd = _forward_batch(params, hyper, H, G, E)
    y_hat = fwd["y_hat"]
    B, n_d, _ = y_hat.shape

    tn = np.linalg.norm(Y, axis=2)
    hn = np.linalg.norm(y_hat, axis=2)
    if np.any(tn == 0.0) or np.any(hn == 0.0):
        raise DegenerateInputError("zero-norm vector in cosine loss")
    yn = Y / tn[..., None]
    yhn = y_hat / hn[..., None]
    cos = np.einsum("bik,bjk->bij", yn, yhn)             # truth i vs sample j
    loss = float(-np.mean(np.mean(cos, axis=(1, 2))))
    if not want_grads:
        return loss, None

    scale = -1.0 / (B * n_d * n_d)
    sum_yn = yn.sum(axis=1)                              # (B, k)
    sum_cos = cos.sum(axis=1)                            # (B, n_d) over truths
    g_yhat = scale * (sum_yn[:, None, :] - sum_cos[..., None] * yhn) / hn[..., None]

    w, comp, mu, pi = fwd["w"], fwd["comp"], fwd["mu"], fwd["pi"]
    g_w = np.einsum("bdi,bdgi->bdg", g_yhat, comp)
    g_comp = w[..., None] * g_yhat[:, :, None, :]
    g_mu = g_comp.sum(axis=1)                            # (B, n_g, k)
    grad_L = np.einsum("bdgi,bdj->gij", g_comp, fwd["E"])

    # back through the gumbel softmax and the gate softmax
    g_u = w * (g_w - np.sum(g_w * w, axis=-1, keepdims=True))
    g_pi = g_u.sum(axis=1) / (hyper.tau * fwd["pi_safe"])
    g_pi = np.where(pi >= PI_FLOOR, g_pi, 0.0)
    g_v = pi * (g_pi - np.sum(g_pi * pi, axis=-1, keepdims=True))
    grad_Wg = np.einsum("bg,bk->gk", g_v, H)
    grad_bg = g_v.sum(axis=0)

    g_a = g_mu * mu * (1.0 - mu)
    grad_Wmu = np.einsum("bgi,bj->gij", g_a, H)
    grad_bmu = g_a.sum(axis=0)

    grads = {"W_mu": grad_Wmu, "b_mu": grad_bmu, "L": grad_L,
             "W_g": grad_Wg, "b_g": grad_bg}
    return loss, grads


def forward_round(
    params: AgentParams,
    hyper: AgentHyper,
    sample: TrainingSample,
    rng: np.random.Generator | None = None,
    noise: RoundNoise | None = None,
) -> tuple[np.ndarray, dict]:
    """Generate the n_display samples for one round.

    Noise may be passed explicitly (frozen, for gradient checks) or drawn
    from the rng; one independent (g, eps) pair per displayed sample.
    """
    if noise is None:
        if rng is None:
            raise InvalidInputError("forward_round needs an rng or frozen noise")
        noise = draw_noise(rng, hyper.n_display, params.n_gaussians, params.k)
    h = context_mean(sample.window, hyper.window)
    fwd = _forward_batch(params, hyper, h[None, :], noise.g[None], noise.eps[None])
    cache = {key: val[0] for key, val in fwd.items() if isinstance(val, np.ndarray)}
    cache["noise"] = noise
    return fwd["y_hat"][0], cache


def _split_train(session_id: str) -> bool:
    digest = hashlib.md5(session_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % 100 < 70


def build_training_set(
    sessions: Sequence[DialogSession],
    space: ProjectionSpace,
    vocab,
    hyper: AgentHyper,
) -> tuple[list[TrainingSample], list[TrainingSample]]:
    """Turn dialog sessions into (train, test) samples, split 70/30 by a
    stable hash of the session id.

    Per round: the window holds the projections of the last <= window
    queries (text queries through the text view, clicks through the clicked
    product's image view); the truth holds the image-view projections of
    the round's displayed products.
    """
    train: list[TrainingSample] = []
    test: list[TrainingSample] = []
    for session in sessions:
        target = train if _split_train(session.session_id) else test
        projections: list[np.ndarray] = []
        for rnd in session.rounds:
            q = rnd.query
            if q.kind == "text":
                proj = space.project_text_tokens(list(q.tokens), vocab)
            else:
                proj = space.project_image_id(q.clicked_product_id)
            projections.append(proj)
            if len(rnd.displayed) != hyper.n_display:
                raise DataError(
                    f"round displays {len(rnd.displayed)} products, "
                    f"expected {hyper.n_display}"
                )
            truth = np.stack([space.project_image_id(pid) for pid in rnd.displayed])
            window = tuple(projections[-hyper.window:])
            target.append(TrainingSample(window=window, truth=truth,
                                         session_id=session.session_id,
                                         round_index=q.round_index))
    return train, test


def _stack_samples(samples: Sequence[TrainingSample], hyper: AgentHyper):
    H = np.stack([context_mean(s.window, hyper.window) for s in samples])
    Y = np.stack([s.truth for s in samples])
    return H, Y


@dataclass
class AgentTrainResult:
    params: AgentParams
    losses: list[float]
    hyper: AgentHyper


def train_agent(samples: Sequence[TrainingSample], hyper: AgentHyper) -> AgentTrainResult:
    """Mini-batch gradient descent on the negative mean-cosine objective.

    losses[0] is the full-set loss at initialization (fixed noise); each
    following entry is the mean minibatch loss of one epoch.
    """
    if not samples:
        raise InvalidInputError("training set is empty")
    k = samples[0].truth.shape[1]
    init_rng = stream_rng(hyper.seed, STREAM_AGENT, 0)
    params = init_agent_params(hyper, k, init_rng)
    rng = stream_rng(hyper.seed, STREAM_AGENT, 1)

    H, Y = _stack_samples(samples, hyper)
    n = len(samples)
    noise0 = draw_noise(stream_rng(hyper.seed, STREAM_AGENT, 2),
                        hyper.n_display, hyper.n_gaussians, k)
    G0 = np.broadcast_to(noise0.g, (n, *noise0.g.shape))
    E0 = np.broadcast_to(noise0.eps, (n, *noise0.eps.shape))
    loss0, _ = _loss_and_grads_batch(params, hyper, H, Y, G0, E0, want_grads=False)
    losses = [loss0]

    batch = min(hyper.batch_size, n)
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch):
            idx = perm[start: start + batch]
            G = gumbel_noise(rng, size=(len(idx), hyper.n_display, hyper.n_gaussians))
            E = rng.standard_normal((len(idx), hyper.n_display, k))
            loss, grads = _loss_and_grads_batch(params, hyper, H[idx], Y[idx], G, E)
            if not np.isfinite(loss):
                raise TrainingError(f"agent loss diverged at epoch {epoch}")
            epoch_losses.append(loss)
            for f in AGENT_FIELDS:
                getattr(params, f)[...] -= hyper.eta * grads[f]
        losses.append(float(np.mean(epoch_losses)))
    params.validate()
    return AgentTrainResult(params=params, losses=losses, hyper=hyper)


def evaluate(params: AgentParams, samples: Sequence[TrainingSample],
             hyper: AgentHyper, seed: int = 0) -> float:
    """Mean cosine similarity between generated and ground-truth products
    over a held-out set (the negated training objective)."""
    if not samples:
        raise InvalidInputError("evaluation set is empty")
    rng = stream_rng(seed, STREAM_AGENT, 3)
    H, Y = _stack_samples(samples, hyper)
    n, k = H.shape
    G = gumbel_noise(rng, size=(n, hyper.n_display, hyper.n_gaussians))
    E = rng.standard_normal((n, hyper.n_display, k))
    loss, _ = _loss_and_grads_batch(params, hyper, H, Y, G, E, want_grads=False)
    return -loss


def decode_samples(y_hat: np.ndarray, space: ProjectionSpace) -> list[str]:
    """Map generated vectors to distinct catalog products: each sample
    greedily takes its nearest (cosine) not-yet-used product."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    n_d = y_hat.shape[0]
    if len(space.ids) < n_d:
        raise ConfigError(f"catalog has fewer than {n_d} products")
    proj = space.image_proj
    norms = np.maximum(np.linalg.norm(proj, axis=1), 1e-12)
    chosen: list[str] = []
    used: set[int] = set()
    for j in range(n_d):
        q = y_hat[j]
        sims = proj @ q / (norms * max(np.linalg.norm(q), 1e-12))
        order = sorted(range(len(space.ids)), key=lambda i: (-sims[i], space.ids[i]))
        for i in order:
            if i not in used:
                used.add(i)
                chosen.append(space.ids[i])
                break
    return chosen


AGENT_MAGIC = b"MMDAGNT1"


def save_agent(result: AgentTrainResult, path, metrics: dict | None = None) -> None:
    p = result.params
    h = result.hyper
    with open(path, "wb") as fh:
        fh.write(AGENT_MAGIC)
        fh.write(struct.pack("<IIII", p.n_gaussians, p.k, h.window, h.n_display))
        fh.write(struct.pack("<dd", h.tau, h.eta))
        for f in AGENT_FIELDS:
            arr = np.asarray(getattr(p, f), dtype=np.float64)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())
    sidecar = {
        "hyper": asdict(h),
        "metrics": dict(metrics or {}),
        "loss_initial": result.losses[0] if result.losses else None,
        "loss_final": result.losses[-1] if result.losses else None,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_agent(path) -> tuple[AgentParams, AgentHyper]:
    with open(path, "rb") as fh:
        magic = fh.read(len(AGENT_MAGIC))
        if magic != AGENT_MAGIC:
            raise ParseError(f"bad agent file header {magic!r}")
        n_g, k, window, n_display = struct.unpack("<IIII", fh.read(16))
        tau, eta = struct.unpack("<dd", fh.read(16))
        arrays = {}
        for f in AGENT_FIELDS:
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape))
            arrays[f] = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
    params = AgentParams(**arrays)
    params.validate()
    if (params.n_gaussians, params.k) != (n_g, k):
        raise ParseError("agent header dims disagree with stored arrays")
    hyper = AgentHyper(n_gaussians=n_g, tau=tau, eta=eta, window=window,
                       n_display=n_display)
    return params, hyper
