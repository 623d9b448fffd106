"""Central finite-difference checks for every differentiable component.

Each check builds a small random instance, reduces the component output to
a scalar with fixed random weights, and compares tape gradients against
central differences for every input and parameter tensor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .alignment import align_speech_to_text, align_text_to_speech
from .classifier import Classifier, classify, nll_loss
from .encoders import LstmLayer, bilstm, lstm_step
from .features import AudioClip, build_feature_sequence
from .fusion import GgfLayer, ggf_forward
from .model import GBAN, Batch, ModelConfig
from .tensor import Tape, Tensor, backward, make_rng, parameter

PRIMITIVE_TOL = 1e-6
COMPOSED_TOL = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def numerical_gradient(f: Callable[[], float], t: Tensor, eps: float, entries=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. the flat ``entries`` of ``t`` (all by default)."""
    flat = t.data.reshape(-1)
    entries = range(flat.size) if entries is None else entries
    out = np.zeros(len(entries))
    for n, k in enumerate(entries):
        orig = flat[k]
        flat[k] = orig + eps
        up = f()
        flat[k] = orig - eps
        down = f()
        flat[k] = orig
        out[n] = (up - down) / (2.0 * eps)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], tensors: list[Tensor], eps: float = 1e-5,
                    max_entries: int | None = None, rng=None) -> dict[str, float]:
    """Per-tensor relative error between tape and finite-difference gradients.

    ``loss_fn`` must return a scalar Tensor; it is called once under a tape
    and then repeatedly without one.  Tensors larger than ``max_entries`` are
    checked on a random subset of coordinates.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)

    def f() -> float:
        return loss_fn().item()

    errors = {}
    for n, t in enumerate(tensors):
        analytic = np.zeros(t.data.size) if t.grad is None else t.grad.reshape(-1)
        entries = None
        if max_entries is not None and t.data.size > max_entries:
            entries = np.sort((rng or make_rng(0)).choice(t.data.size, max_entries, replace=False))
            analytic = analytic[entries]
        numeric = numerical_gradient(f, t, eps, entries if entries is not None else None)
        errors[t.name or f"t{n}"] = relative_error(analytic, numeric)
    return errors


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum()


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


# --------------------------------------------------------------------------
# component instances
# --------------------------------------------------------------------------


def _p(rng, *shape, name=None, scale=1.0):
    return parameter(rng.normal(0.0, scale, size=shape), name=name)


def _check_matmul(rng):
    a, b = _p(rng, 3, 4, name="a"), _p(rng, 4, 2, name="b")
    w = rng.normal(size=(3, 2))
    return check_gradients(lambda: _weighted_sum(T.matmul(a, b), w), [a, b])


def _check_conv1d(rng):
    x, k, b = _p(rng, 10, 2, name="input"), _p(rng, 3, 2, 4, name="kernels"), _p(rng, 4, name="bias")
    w1, w2 = rng.normal(size=(8, 4)), rng.normal(size=(4, 4))
    return check_gradients(
        lambda: _weighted_sum(T.conv1d(x, k, b, 1), w1) + _weighted_sum(T.conv1d(x, k, b, 2), w2),
        [x, k, b])


def _check_max_pool(rng):
    # distinct values keep every window away from a tie
    x = parameter(rng.permutation(36).reshape(12, 3) * 0.1 + rng.normal(0, 0.01, (12, 3)), name="input")
    w1, w2 = rng.normal(size=(6, 3)), rng.normal(size=(10, 3))
    return check_gradients(
        lambda: _weighted_sum(T.max_pool1d(x, 2, 2), w1) + _weighted_sum(T.max_pool1d(x, 3, 1), w2), [x])


def _check_average_pool(rng):
    xs = [_p(rng, 8, name=f"x{n}") for n in range(5)]
    w = rng.normal(size=8)
    return check_gradients(lambda: _weighted_sum(T.average_pool(xs), w), xs)


def _activation_check(kind):
    def run(rng):
        data = rng.normal(size=(4, 5))
        if kind == "relu":
            data = np.where(np.abs(data) < 0.1, 0.5, data)
        x = parameter(data, name="input")
        w = rng.normal(size=(4, 5))
        return check_gradients(lambda: _weighted_sum(T.activation(x, kind), w), [x])
    return run


def _check_softmax(rng):
    x = _p(rng, 3, 6, name="scores")
    mask = np.ones((3, 6), dtype=bool)
    mask[1, 4:] = False
    w = rng.normal(size=(3, 6))
    return check_gradients(
        lambda: _weighted_sum(T.softmax(x, axis=-1), w) + _weighted_sum(T.softmax(x, axis=-1, mask=mask), w),
        [x])


def _lstm(rng, d, h, prefix):
    layer = LstmLayer.init(d, h, rng, prefix=prefix)
    layer.b.data += rng.normal(0, 0.5, size=layer.b.shape)
    return layer


def _check_lstm_step(rng):
    layer = _lstm(rng, 3, 4, "lstm")
    x, h0, c0 = _p(rng, 3, name="x"), _p(rng, 4, name="h_prev"), _p(rng, 4, name="c_prev")
    w1, w2 = rng.normal(size=4), rng.normal(size=4)

    def loss():
        h, c = lstm_step(layer, x, h0, c0)
        return _weighted_sum(h, w1) + _weighted_sum(c, w2)

    return check_gradients(loss, [layer.W, layer.U, layer.b, x, h0, c0])


def _check_bilstm(rng):
    fwd, bwd = _lstm(rng, 3, 4, "fwd"), _lstm(rng, 3, 4, "bwd")
    seq = _p(rng, 2, 6, 3, name="seq")
    lengths = np.array([6, 4])
    w1, w2 = rng.normal(size=(2, 6, 8)), rng.normal(size=(2, 8))

    def loss():
        states, last = bilstm(fwd, bwd, seq, lengths)
        return _weighted_sum(states, w1) + _weighted_sum(last, w2)

    return check_gradients(loss, [fwd.W, fwd.U, fwd.b, bwd.W, bwd.U, bwd.b, seq])


def _align_check(direction):
    def run(rng):
        k, l, d = (3, 2, 4) if direction == "text_to_speech" else (2, 3, 4)
        s = _p(rng, 2, k + 1, d, name="speech_seq")
        t = _p(rng, 2, l + 1, d, name="text_seq")
        k_valid, l_valid = np.array([k, k + 1]), np.array([l + 1, l])
        w = rng.normal(size=(2, d))
        if direction == "speech_to_text":
            fn = lambda: _weighted_sum(align_speech_to_text(s, t, k_valid, l_valid)[0], w)  # noqa: E731
        else:
            fn = lambda: _weighted_sum(align_text_to_speech(t, s, l_valid, k_valid)[0], w)  # noqa: E731
        return check_gradients(fn, [s, t])
    return run


def _check_ggf(rng):
    layer = GgfLayer.init(5, 4, rng)
    reps = [_p(rng, 2, 5, name=n) for n in ("a_s", "a_t", "h_s", "h_t")]
    w1, w2, w3 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def loss():
        h, z_p, z_q = ggf_forward(layer, *reps)
        return _weighted_sum(h, w1) + _weighted_sum(z_p, w2) + _weighted_sum(z_q, w3)

    return check_gradients(loss, layer.parameters() + reps)


def _check_classifier(rng):
    clf = Classifier.init(6, 5, 4, rng)
    clf.b.data += rng.normal(size=4)
    h = _p(rng, 3, 6, name="h")
    w = rng.normal(size=(3, 4))
    return check_gradients(lambda: _weighted_sum(classify(clf, h, training=False), w), clf.parameters() + [h])


def _check_nll(rng):
    logits = _p(rng, 4, 4, name="logits")
    labels = np.array([0, 3, 1, 1])
    return check_gradients(lambda: nll_loss(T.softmax(logits, axis=-1), labels), [logits])


def toy_model(seed: int = 0, fusion: str = "ggf") -> tuple[GBAN, Batch]:
    """A tiny model plus a 2-sample batch built from synthesized audio."""
    rng = make_rng(seed)
    cfg = ModelConfig(
        embed_dim=5, speech_channels=(3,), speech_kernels=(3,), speech_pools=(2,),
        text_channels=(3,), text_kernels=(2,), text_pools=(2,),
        hidden=3, classifier_hidden=4, fusion=fusion,
    )
    vocab = rng.normal(0.0, 0.5, size=(8, cfg.embed_dim))
    vocab[0] = 0.0
    model = GBAN(cfg, vocab, seed=seed)
    for p in model.parameters().values():
        if p.ndim == 1:
            p.data += rng.normal(0.0, 0.3, size=p.shape)
    sr = 16000
    frames, n_frames = [], []
    for n, (dur, f0) in enumerate([(0.12, 220.0), (0.09, 440.0)]):
        t = np.arange(int(dur * sr)) / sr
        wave = 0.4 * np.sin(2 * np.pi * f0 * t) + 0.05 * rng.normal(size=t.size)
        fs = build_feature_sequence(AudioClip(wave, sr), max_seconds=0.15)
        # log-mel magnitudes are large; scale them so the tiny LSTM avoids saturation
        frames.append(fs.frames * 0.05)
        n_frames.append(fs.n_valid)
    batch = Batch(
        frames=np.stack(frames), n_frames=np.array(n_frames),
        tokens=np.array([[2, 3, 4, 5, 6, 7, 2, 0], [6, 7, 1, 3, 5, 0, 0, 0]]), n_tokens=np.array([7, 5]),
        labels=np.array([1, 2]),
    )
    return model, batch


def _check_model(rng):
    model, batch = toy_model(int(rng.integers(1 << 31)))
    params = list(model.parameters().values())
    return check_gradients(lambda: nll_loss(model.forward(batch).probs, batch.labels), params,
                           eps=1e-4, max_entries=48, rng=rng)


COMPONENTS: dict[str, tuple[Callable, float]] = {
    "matmul": (_check_matmul, PRIMITIVE_TOL),
    "conv1d": (_check_conv1d, PRIMITIVE_TOL),
    "max_pool1d": (_check_max_pool, PRIMITIVE_TOL),
    "average_pool": (_check_average_pool, PRIMITIVE_TOL),
    "tanh": (_activation_check("tanh"), PRIMITIVE_TOL),
    "sigmoid": (_activation_check("sigmoid"), PRIMITIVE_TOL),
    "relu": (_activation_check("relu"), PRIMITIVE_TOL),
    "softmax": (_check_softmax, PRIMITIVE_TOL),
    "lstm_step": (_check_lstm_step, PRIMITIVE_TOL),
    "bilstm": (_check_bilstm, PRIMITIVE_TOL),
    "align_speech_to_text": (_align_check("speech_to_text"), PRIMITIVE_TOL),
    "align_text_to_speech": (_align_check("text_to_speech"), PRIMITIVE_TOL),
    "ggf": (_check_ggf, PRIMITIVE_TOL),
    "classifier": (_check_classifier, PRIMITIVE_TOL),
    "nll_loss": (_check_nll, PRIMITIVE_TOL),
    "model": (_check_model, COMPOSED_TOL),
}


def run_checks(only: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    names = list(COMPONENTS) if not only else only
    unknown = [n for n in names if n not in COMPONENTS]
    if unknown:
        raise KeyError(f"unknown gradcheck components {unknown}; choose from {list(COMPONENTS)}")
    results = []
    for n, name in enumerate(names):
        fn, tol = COMPONENTS[name]
        start = time.perf_counter()
        errors = fn(make_rng(seed * 1000 + list(COMPONENTS).index(name)))
        results.append(CheckResult(name, max(errors.values()), tol, time.perf_counter() - start, errors))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = ["component,max_rel_error,tolerance,status"]
    for r in results:
        lines.append(f"{r.name},{r.max_error:.3e},{r.tolerance:.0e},{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
