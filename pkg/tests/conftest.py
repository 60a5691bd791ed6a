import os

import numpy as np
import pytest

from ibgen.classifier import SoftmaxDecoder
from ibgen.encoders import GaussianEncoder, LogNormalEncoder
from ibgen.nn import Dense, DenseNet, Rng

MNIST_DIR = os.environ.get("IBGEN_MNIST_DIR", "/root/data/mnist")
CIFAR_DIR = os.environ.get("IBGEN_CIFAR_DIR", "/root/data/cifar-10-batches-bin")


def small_gaussian(d_x=3, d_u=2, hidden=5, seed=0):
    return GaussianEncoder.init(d_x, Rng(seed), d_u=d_u, hidden=hidden)


def small_lognormal(d_x=3, d_u=2, hidden=5, seed=0):
    return LogNormalEncoder.init(d_x, Rng(seed), d_u=d_u, hidden=hidden)


def linear_gaussian(A, b, logvar):
    """Gaussian encoder with mu(x) = A x + b and constant variance exp(logvar).

    Built from the regular nets: an identity relu trunk (inputs are kept
    nonnegative) feeding linear heads.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    d_u, d_x = A.shape
    trunk = DenseNet([Dense(np.eye(d_x), np.zeros(d_x), "relu")])
    mu = DenseNet([Dense(A.T.copy(), np.asarray(b, dtype=np.float64).copy(), "linear")])
    lv = DenseNet([Dense(np.zeros((d_x, d_u)), np.full(d_u, float(logvar)), "linear")])
    return GaussianEncoder(trunk, mu, lv)


def constant_gaussian(d_x, mean, logvar):
    """Encoder whose output distribution does not depend on x."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return linear_gaussian(np.zeros((mean.size, d_x)), mean, logvar)


def random_decoder(d_u, n_classes, seed=0):
    return SoftmaxDecoder.init(d_u, n_classes, Rng(seed))


@pytest.fixture
def rng():
    return Rng(1234)


def gradient_check(encoder, dec, X, y, lam, noise, h=1e-6):
    """Max relative error between analytic and central-difference gradients of the full objective.

    The noise array is held fixed (common random numbers).  Relative error is
    |a - n| / max(|a| + |n|, 1e-8) per coordinate.
    """
    from ibgen.classifier import model_params, objective_and_gradients

    _, grads, _ = objective_and_gradients(encoder, dec, X, y, lam, noise=noise)
    params = model_params(encoder, dec)
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        flat = p.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = objective_and_gradients(encoder, dec, X, y, lam, noise=noise)[0]
            flat[i] = old - h
            fm = objective_and_gradients(encoder, dec, X, y, lam, noise=noise)[0]
            flat[i] = old
            num[i] = (fp - fm) / (2 * h)
        a = g.reshape(-1)
        rel = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


# ---------------------------------------------------------------------------
# crafted golden files
# ---------------------------------------------------------------------------


def golden_images(n=3):
    """Deterministic 28x28 uint8 images with pixel (i, j) of image k = (k*31 + i*28 + j) mod 256."""
    k, i, j = np.meshgrid(np.arange(n), np.arange(28), np.arange(28), indexing="ij")
    return ((k * 31 + i * 28 + j) % 256).astype(np.uint8)


def write_golden_mnist(directory, n=3, labels=None):
    from ibgen.data import write_idx

    labels = np.arange(n, dtype=np.uint8) % 10 if labels is None else np.asarray(labels, dtype=np.uint8)
    img = os.path.join(directory, "train-images-idx3-ubyte")
    lab = os.path.join(directory, "train-labels-idx1-ubyte")
    write_idx(img, golden_images(n))
    write_idx(lab, labels)
    return img, lab


def golden_cifar_bytes(labels):
    recs = []
    for k, lab in enumerate(labels):
        pix = ((np.arange(3072) + 7 * k) % 256).astype(np.uint8)
        recs.append(bytes([lab]) + pix.tobytes())
    return b"".join(recs)


TINY_INI = """
[experiment]
seed = 7
replicates = 2
lambdas = 0, 0.1

[data]
kind = synthetic
n_train = 200
n_test = 400

[train]
encoder = gaussian
d_u = 2
hidden = 8
epochs = 3
batch_size = 50
mc_eval = 4

[bound]
per_axis = 1, 2
betas = 0.25, 0.5
mc_samples = 8
n_random_probes = 4
"""


def run_every_command(workdir, ini_text=TINY_INI):
    """Run each CLI subcommand into ``workdir``; return ``{relative path: bytes}`` of written files."""
    import os

    from ibgen.cli import main

    os.makedirs(workdir, exist_ok=True)
    ini = os.path.join(workdir, "tiny.ini")
    with open(ini, "w") as fh:
        fh.write(ini_text)
    out = {}
    for cmd in ("train", "sweep", "bound", "data-cache"):
        d = os.path.join(workdir, cmd)
        assert main([cmd, "--config", ini, "--out", d]) == 0
    assert main(["mi", "--config", ini, "--checkpoint", os.path.join(workdir, "train", "checkpoint.ibnd")]) == 0
    for root, _, files in os.walk(workdir):
        for f in files:
            if f.endswith((".csv", ".ibnd", ".txt")):
                p = os.path.join(root, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, workdir)] = fh.read()
    return out


ACCEPTANCE_LINES: list = []


def verdict(number, title, ok, detail=""):
    """Record and print one acceptance line, then fail the test when ``ok`` is false."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
