"""Soft-max decoder, Monte-Carlo cross-entropy, the lambda-regularized objective and training."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoders import GaussianEncoder, LogNormalEncoder, RbmEncoder, cd1_step, rbm_momentum
from .errors import ConfigError, NonFiniteError, ShapeError
from .info import PriorSpec, per_sample_kl
from .nn import SGD, Adam, Rng

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ["epoch", "train_loss", "kl_term", "test_loss", "accuracy"]
ENCODER_KINDS = ("gaussian", "lognormal", "rbm")


class SoftmaxDecoder:
    """Q(y|u) = softmax(u @ W + b)."""

    def __init__(self, W, b):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.b.shape != (self.W.shape[1],):
            raise ShapeError("decoder bias must have one entry per class")

    @classmethod
    def init(cls, d_u: int, n_classes: int, rng: Rng):
        limit = np.sqrt(6.0 / (d_u + n_classes))
        return cls((2.0 * rng.uniform((d_u, n_classes)) - 1.0) * limit, np.zeros(n_classes))

    @classmethod
    def uniform(cls, d_u: int, n_classes: int):
        return cls(np.zeros((d_u, n_classes)), np.zeros(n_classes))

    @property
    def n_classes(self):
        return self.W.shape[1]

    def params(self):
        return {"W": self.W, "b": self.b}

    def copy(self):
        return SoftmaxDecoder(self.W.copy(), self.b.copy())

    def log_probs(self, u) -> np.ndarray:
        """log Q(.|u) over the last axis, via log-sum-exp."""
        z = np.asarray(u, dtype=np.float64) @ self.W + self.b
        top = z.max(axis=-1, keepdims=True)
        return z - (top + np.log(np.sum(np.exp(z - top), axis=-1, keepdims=True)))


def decoder_log_prob(dec: SoftmaxDecoder, u, y) -> np.ndarray:
    lp = dec.log_probs(u)
    y = np.asarray(y)
    if np.any((y < 0) | (y >= dec.n_classes)):
        raise ShapeError("label out of range")
    return np.take_along_axis(lp, np.broadcast_to(y, lp.shape[:-1])[..., None], axis=-1)[..., 0]


def _noise_shape(encoder, s, n):
    return (s, n, encoder.d_u)


def mc_cross_entropy(encoder, dec: SoftmaxDecoder, x, y, rng: Rng, s: int = 1) -> np.ndarray:
    """(1/s) sum_i -log Q(y | u_i), u_i ~ q(.|x); one value per row of ``x``."""
    if s < 1:
        raise ValueError("need at least one sample")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    noise = rng.gaussian(_noise_shape(encoder, s, X.shape[0]))
    U = encoder.decoder_input(X, noise)
    return -decoder_log_prob(dec, U, y[None, :]).mean(axis=0)


def objective_and_gradients(encoder, dec: SoftmaxDecoder, X, y, lam: float, rng: Rng | None = None, s: int = 1, noise=None):
    """Batch objective  mean CE + lam * mean_i sum_j KL(q(u_j|x_i) || prior_j).

    ``noise`` (shape (s, n, d_u)) can be passed to fix the random numbers, as
    the gradient checks do.  Returns ``(value, grads, parts)`` where ``grads``
    maps ``enc.<name>`` / ``dec.<name>`` to arrays and ``parts`` holds the CE
    and KL pieces.
    """
    if not encoder.reparameterized:
        raise ConfigError("objective_and_gradients needs a reparameterized encoder")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    if noise is None:
        noise = rng.gaussian(_noise_shape(encoder, s, n))
    s = noise.shape[0]
    U, kl, ctx = encoder.train_forward(X, noise)

    logits = U @ dec.W + dec.b
    top = logits.max(axis=-1, keepdims=True)
    ez = np.exp(logits - top)
    Z = ez.sum(axis=-1, keepdims=True)
    logp_y = np.take_along_axis(logits, np.broadcast_to(y, (s, n))[..., None], axis=-1)[..., 0] - (top + np.log(Z))[..., 0]
    per_sample = -logp_y.mean(axis=0) + lam * kl.sum(axis=1)
    if not np.all(np.isfinite(per_sample)):
        bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
        raise NonFiniteError(f"non-finite loss at batch row {bad}", where=bad)
    ce = float(-logp_y.mean())
    kl_mean = float(kl.sum(axis=1).mean())
    value = ce + lam * kl_mean

    dlogits = ez / Z
    np.add.at(dlogits, (slice(None), np.arange(n), y), -1.0)
    dlogits /= s * n
    grads = {
        "dec.W": np.einsum("snd,snk->dk", U, dlogits),
        "dec.b": dlogits.sum(axis=(0, 1)),
    }
    dU = dlogits @ dec.W.T
    for k, v in encoder.train_backward(ctx, dU, lam / n).items():
        grads["enc." + k] = v
    return value, grads, {"ce": ce, "kl": kl_mean}


def model_params(encoder, dec) -> dict[str, np.ndarray]:
    p = {"enc." + k: v for k, v in encoder.params().items()}
    p.update({"dec." + k: v for k, v in dec.params().items()})
    return p


# ---------------------------------------------------------------------------
# risk and generalization error
# ---------------------------------------------------------------------------


@dataclass
class RiskReport:
    risk: float
    accuracy: float
    losses: np.ndarray = field(repr=False)


def evaluate_risk(encoder, dec: SoftmaxDecoder, X, y, rng: Rng, s: int = 16, chunk: int = 1000) -> RiskReport:
    """Empirical cross-entropy risk and accuracy (argmax of the MC-averaged predictive)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not encoder.reparameterized:
        s = 1
    losses = np.empty(X.shape[0])
    correct = 0
    for lo in range(0, X.shape[0], chunk):
        xb, yb = X[lo : lo + chunk], y[lo : lo + chunk]
        noise = rng.gaussian(_noise_shape(encoder, s, xb.shape[0]))
        lp = dec.log_probs(encoder.decoder_input(xb, noise))
        losses[lo : lo + chunk] = -np.take_along_axis(lp, np.broadcast_to(yb, lp.shape[:2])[..., None], axis=-1)[..., 0].mean(axis=0)
        pred = np.exp(lp).mean(axis=0).argmax(axis=1)
        correct += int(np.sum(pred == yb))
    return RiskReport(float(losses.mean()), correct / max(len(y), 1), losses)


@dataclass
class GenError:
    value: float
    signed: float
    train_risk: float
    test_risk: float


def generalization_error(encoder, dec, train, test, rng: Rng, s: int = 16) -> GenError:
    """|test risk - train risk|; ``signed`` keeps the sign (positive means overfitting)."""
    r_tr = evaluate_risk(encoder, dec, train.X, train.y, rng.split("train"), s).risk
    r_te = evaluate_risk(encoder, dec, test.X, test.y, rng.split("test"), s).risk
    return GenError(abs(r_te - r_tr), r_te - r_tr, r_tr, r_te)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    encoder: str = "gaussian"
    lam: float = 0.0
    epochs: int = 200
    batch_size: int = 100
    lr: float = 1e-3
    mc_train: int = 1
    mc_eval: int = 16
    seed: int = 0
    d_u: int = 256
    hidden: int = 0  # 0 -> architecture default (512 gaussian, 256 log-normal)
    prior: str = ""
    # RBM pipeline: ``epochs`` counts CD epochs
    cd_lr: float = 0.1
    momentum_start: float = 0.5
    momentum_final: float = 0.9
    momentum_switch: int = 5
    decoder_epochs: int = 500
    decoder_lr: float = 0.1
    eval_every: int = 1

    def __post_init__(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.encoder!r}; expected one of {ENCODER_KINDS}")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.mc_train < 1 or self.mc_eval < 1:
            raise ConfigError("mc sample counts must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    encoder: object
    decoder: SoftmaxDecoder
    log: list = field(default_factory=list)


def init_models(d_x: int, n_classes: int, config: TrainConfig, rng: Rng, data=None):
    init = rng.split("init")
    if config.encoder == "gaussian":
        enc = GaussianEncoder.init(d_x, init.split("encoder"), d_u=config.d_u, hidden=config.hidden or 512)
    elif config.encoder == "lognormal":
        enc = LogNormalEncoder.init(d_x, init.split("encoder"), d_u=config.d_u, hidden=config.hidden or 256)
    else:
        enc = RbmEncoder.init(d_x, init.split("encoder"), d_u=config.d_u, data=data)
    dec = SoftmaxDecoder.init(enc.d_u, n_classes, init.split("decoder"))
    return enc, dec


def _batches(n, batch_size, rng: Rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _eval_row(epoch, encoder, dec, test, rng, config):
    if test is None or config.eval_every <= 0 or epoch % config.eval_every:
        return float("nan"), float("nan")
    rep = evaluate_risk(encoder, dec, test.X, test.y, rng.split(("eval", epoch)), config.mc_eval)
    return rep.risk, rep.accuracy


def train(dataset, config: TrainConfig, test=None) -> TrainResult:
    """Train encoder + decoder on ``dataset``; deterministic given ``config.seed``.

    ``test`` (optional) is only used for the per-epoch log columns.
    """
    rng = Rng(config.seed)
    enc, dec = init_models(dataset.X.shape[1], dataset.n_classes, config, rng, data=dataset.X)
    if config.encoder == "rbm":
        return _train_rbm(dataset, enc, dec, config, rng, test)

    params = model_params(enc, dec)
    opt = Adam(config.lr)
    shuffle, noise_rng = rng.split("shuffle"), rng.split("noise")
    n = dataset.n
    history = []
    for epoch in range(1, config.epochs + 1):
        ce_sum = kl_sum = 0.0
        for bi, idx in enumerate(_batches(n, config.batch_size, shuffle)):
            try:
                _, grads, parts = objective_and_gradients(
                    enc, dec, dataset.X[idx], dataset.y[idx], config.lam, noise_rng, config.mc_train
                )
                opt.step(params, grads)
            except NonFiniteError as exc:
                raise NonFiniteError(f"training diverged at epoch {epoch}, batch {bi}: {exc}", where=(epoch, bi)) from exc
            ce_sum += parts["ce"] * len(idx)
            kl_sum += parts["kl"] * len(idx)
        test_loss, acc = _eval_row(epoch, enc, dec, test, rng, config)
        history.append(dict(epoch=epoch, train_loss=ce_sum / n, kl_term=kl_sum / n, test_loss=test_loss, accuracy=acc))
        log.debug("epoch %d: %s", epoch, history[-1])
    return TrainResult(enc, dec, history)


def _train_rbm(dataset, rbm: RbmEncoder, dec: SoftmaxDecoder, config: TrainConfig, rng: Rng, test) -> TrainResult:
    """CD-1 pretraining with weight cost ``lam``, then a soft-max fit on the frozen mean features."""
    if config.epochs == 0:
        return TrainResult(rbm, dec, [])
    cd_rng, shuffle = rng.split("cd"), rng.split("shuffle")
    X, y, n = dataset.X, dataset.y, dataset.n
    history = []
    cd_epochs = config.epochs
    for epoch in range(1, cd_epochs + 1):
        m = rbm_momentum(epoch - 1, config.momentum_start, config.momentum_final, config.momentum_switch)
        err = 0.0
        for idx in _batches(n, config.batch_size, shuffle):
            _, e = cd1_step(rbm, X[idx], cd_rng, config.cd_lr, m, config.lam)
            err += e * len(idx)
        if not np.all(np.isfinite(rbm.W)):
            raise NonFiniteError(f"RBM diverged at epoch {epoch}", where=(epoch, None))
        history.append(dict(epoch=epoch, train_loss=err / n, kl_term=float("nan"), test_loss=float("nan"), accuracy=float("nan")))

    feats = rbm.hidden_probs(X)
    opt = SGD(config.decoder_lr, 0.0)
    dparams = dec.params()
    for epoch in range(1, config.decoder_epochs + 1):
        ce_sum = 0.0
        for idx in _batches(n, config.batch_size, shuffle):
            u, yb = feats[idx], y[idx]
            lp = dec.log_probs(u)
            ce_sum += -np.sum(lp[np.arange(len(idx)), yb])
            d = np.exp(lp)
            d[np.arange(len(idx)), yb] -= 1.0
            d /= len(idx)
            opt.step(dparams, {"W": u.T @ d, "b": d.sum(axis=0)})
        test_loss, acc = _eval_row(epoch, rbm, dec, test, rng, config) if epoch == config.decoder_epochs else (float("nan"), float("nan"))
        history.append(dict(epoch=cd_epochs + epoch, train_loss=ce_sum / n, kl_term=float("nan"), test_loss=test_loss, accuracy=acc))
    return TrainResult(rbm, dec, history)


def write_train_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAIN_LOG_HEADER)
        for row in history:
            w.writerow([row["epoch"]] + [format(float(row[k]), ".17g") for k in TRAIN_LOG_HEADER[1:]])


def default_prior(config: TrainConfig) -> PriorSpec:
    from .info import DEFAULT_PRIOR

    return PriorSpec(config.prior or DEFAULT_PRIOR[config.encoder])


__all__ = [
    "SoftmaxDecoder",
    "decoder_log_prob",
    "mc_cross_entropy",
    "objective_and_gradients",
    "evaluate_risk",
    "generalization_error",
    "TrainConfig",
    "TrainResult",
    "train",
    "write_train_log",
    "per_sample_kl",
]
