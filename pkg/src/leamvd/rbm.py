"""Binary RBMs, CD-1 training and greedy DBN pretraining.

An RBM is flattened to a single parameter vector laid out as
``[W row-major, b, c]`` so that it can be searched by the optimizer. The
objective is the summed squared error of a deterministic mean-field
reconstruction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from leamvd import optimizer as opt

CKPT_MAGIC = b"RBM1"

CD = "CD"
LEA_MVD = "LEA_MVD"
LEA_MVD_SEEDED = "LEA_MVD_seeded_by_CD"
TRAINERS = (CD, LEA_MVD, LEA_MVD_SEEDED)


class DivergenceError(ArithmeticError):
    pass


@dataclass
class Rbm:
    W: np.ndarray  # (n_visible, n_hidden)
    b: np.ndarray  # visible bias
    c: np.ndarray  # hidden bias

    def __post_init__(self):
        nv, nh = self.W.shape
        if self.b.shape != (nv,) or self.c.shape != (nh,):
            raise ValueError(
                f"bias shapes {self.b.shape}, {self.c.shape} do not match W {self.W.shape}"
            )

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "Rbm":
        return Rbm(self.W.copy(), self.b.copy(), self.c.copy())


def param_count(n_visible: int, n_hidden: int) -> int:
    return n_visible * n_hidden + n_visible + n_hidden


def init_rbm(n_visible: int, n_hidden: int, rng: np.random.Generator, weight_std: float = 0.01) -> Rbm:
    W = rng.normal(0.0, weight_std, size=(n_visible, n_hidden))
    return Rbm(W, np.zeros(n_visible), np.zeros(n_hidden))


def flatten(rbm: Rbm) -> np.ndarray:
    return np.concatenate([rbm.W.ravel(), rbm.b, rbm.c])


def unflatten(vector: np.ndarray, n_visible: int, n_hidden: int) -> Rbm:
    """Inverse of :func:`flatten`. The returned arrays are views of ``vector``."""
    vector = np.asarray(vector, dtype=float)
    expected = param_count(n_visible, n_hidden)
    if vector.shape != (expected,):
        raise ValueError(
            f"parameter vector has length {vector.size}, expected {expected} "
            f"for a {n_visible}x{n_hidden} RBM"
        )
    nw = n_visible * n_hidden
    W = vector[:nw].reshape(n_visible, n_hidden)
    return Rbm(W, vector[nw : nw + n_visible], vector[nw + n_visible :])


def _check_visible(rbm: Rbm, V: np.ndarray) -> None:
    if V.ndim != 2 or V.shape[1] != rbm.n_visible:
        raise ValueError(f"data has shape {V.shape}, RBM expects {rbm.n_visible} visible units")


def hidden_activation(rbm: Rbm, V: np.ndarray) -> np.ndarray:
    _check_visible(rbm, V)
    return expit(V @ rbm.W + rbm.c)


def visible_activation(rbm: Rbm, H: np.ndarray) -> np.ndarray:
    return expit(H @ rbm.W.T + rbm.b)


def reconstruct(rbm: Rbm, V: np.ndarray) -> np.ndarray:
    return visible_activation(rbm, hidden_activation(rbm, V))


def reconstruction_error(rbm: Rbm, V: np.ndarray) -> float:
    R = reconstruct(rbm, V)
    np.subtract(V, R, out=R)
    return float(np.einsum("ij,ij->", R, R))


class ReconstructionObjective:
    """Reconstruction error of a flattened RBM on fixed data."""

    def __init__(self, V: np.ndarray, n_visible: int, n_hidden: int):
        self.V = np.ascontiguousarray(V, dtype=float)
        if self.V.shape[1] != n_visible:
            raise ValueError(f"data width {self.V.shape[1]} != n_visible {n_visible}")
        self.n_visible = n_visible
        self.n_hidden = n_hidden
        self.n_var = param_count(n_visible, n_hidden)

    def __call__(self, x: np.ndarray) -> float:
        return reconstruction_error(unflatten(x, self.n_visible, self.n_hidden), self.V)


@dataclass
class CdConfig:
    epochs: int = 50
    learning_rate: float = 0.1
    minibatch_size: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.minibatch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs, minibatch_size and learning_rate must be non-negative/positive")


def cd1_epochwise_train(
    rbm: Rbm,
    V_train: np.ndarray,
    config: CdConfig,
    callback: Optional[Callable[[int, float], None]] = None,
    V_eval: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Rbm, list[float]]:
    """Train a copy of ``rbm`` with CD-1 and return it with per-epoch errors.

    Each epoch shuffles the rows, then for every minibatch samples binary
    hidden states once, reconstructs mean-field visibles and recomputes hidden
    probabilities. The error after each epoch is measured on ``V_eval``
    (default: the training data).
    """
    _check_visible(rbm, V_train)
    if rng is None:
        rng = opt.make_rng(config.rng_seed)
    V_eval = V_train if V_eval is None else V_eval
    model = rbm.copy()
    W, b, c = model.W, model.b, model.c
    lr = config.learning_rate
    m = V_train.shape[0]
    errors: list[float] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, config.minibatch_size):
            v0 = V_train[order[start : start + config.minibatch_size]]
            h0 = expit(v0 @ W + c)
            h_sample = (rng.random(h0.shape) < h0).astype(float)
            v1 = expit(h_sample @ W.T + b)
            h1 = expit(v1 @ W + c)
            scale = lr / v0.shape[0]
            W += scale * (v0.T @ h0 - v1.T @ h1)
            b += scale * (v0 - v1).sum(axis=0)
            c += scale * (h0 - h1).sum(axis=0)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise DivergenceError(f"CD-1 produced non-finite parameters at epoch {epoch}")
        err = reconstruction_error(model, V_eval)
        errors.append(err)
        if callback is not None:
            callback(epoch, err)
    return model, errors


@dataclass
class DbnSpec:
    layers: list[tuple[int, int]]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DBN needs at least one layer")
        self.layers = [(int(v), int(h)) for v, h in self.layers]
        for (_, h_prev), (v_next, _) in zip(self.layers, self.layers[1:]):
            if h_prev != v_next:
                raise ValueError(f"layer chain broken: hidden size {h_prev} feeds visible size {v_next}")

    def param_counts(self) -> list[int]:
        return [param_count(v, h) for v, h in self.layers]


SMALL_7X7 = DbnSpec([(49, 30), (30, 30), (30, 120)])
FULL_28X28 = DbnSpec([(784, 500), (500, 500), (500, 2000)])


@dataclass
class LayerResult:
    rbm: Rbm
    history: list[opt.GenerationRecord]
    train_data: np.ndarray


def derive_seed(base: int, *keys: int) -> int:
    """Stable 64-bit seed for a sub-task of a seeded run."""
    return int(np.random.SeedSequence([base, *keys]).generate_state(1, dtype=np.uint64)[0])


def _cd_record(epoch: int, err: float) -> opt.GenerationRecord:
    # step-size columns do not apply to CD; one epoch counts as one evaluation pass
    nan = float("nan")
    return opt.GenerationRecord(epoch, err, nan, nan, nan, False, epoch)


def _cd_history(errors: Sequence[float]) -> list[opt.GenerationRecord]:
    return [_cd_record(epoch, err) for epoch, err in enumerate(errors, start=1)]


def train_layer(
    n_visible: int,
    n_hidden: int,
    V: np.ndarray,
    trainer: str,
    budget: int,
    seed: int,
    cd_config: Optional[CdConfig] = None,
    optimizer_kwargs: Optional[dict] = None,
    callback: Optional[Callable[[opt.GenerationRecord], None]] = None,
) -> tuple[Rbm, list[opt.GenerationRecord]]:
    if trainer not in TRAINERS:
        raise ValueError(f"unknown trainer {trainer!r}; choose from {TRAINERS}")
    cd_config = cd_config or CdConfig()
    rng = opt.make_rng(seed)
    if trainer == CD:
        start = init_rbm(n_visible, n_hidden, rng)
        cfg = CdConfig(budget, cd_config.learning_rate, cd_config.minibatch_size, seed)

        def on_epoch(epoch: int, err: float) -> None:
            if callback is not None:
                callback(_cd_record(epoch, err))

        rbm, errors = cd1_epochwise_train(start, V, cfg, callback=on_epoch, rng=rng)
        return rbm, _cd_history(errors)

    objective = ReconstructionObjective(V, n_visible, n_hidden)
    kwargs = dict(optimizer_kwargs or {})
    if trainer == LEA_MVD_SEEDED:
        start = init_rbm(n_visible, n_hidden, rng)
        cfg = CdConfig(1, cd_config.learning_rate, cd_config.minibatch_size, seed)
        seeded, _ = cd1_epochwise_train(start, V, cfg, rng=rng)
        kwargs["init_mode"] = opt.GaussianAroundSeed(flatten(seeded))
    config = opt.OptimizerConfig(
        n_var=objective.n_var, n_gen=budget, rng_seed=derive_seed(seed, 1), **kwargs
    )
    result = opt.run(config, objective, callback=callback)
    return unflatten(result.x_best, n_visible, n_hidden), result.history


def pretrain_dbn(
    spec: DbnSpec,
    V_train: np.ndarray,
    trainer: str,
    budget: int = 50,
    seed: int = 0,
    cd_config: Optional[CdConfig] = None,
    optimizer_kwargs: Optional[dict] = None,
    on_layer: Optional[Callable[[int, LayerResult], None]] = None,
) -> list[LayerResult]:
    """Greedy layer-wise pretraining; layer k+1 sees the hidden probabilities of layer k."""
    if V_train.shape[1] != spec.layers[0][0]:
        raise ValueError(
            f"data width {V_train.shape[1]} does not match first layer's {spec.layers[0][0]} visible units"
        )
    data = np.ascontiguousarray(V_train, dtype=float)
    results = []
    for k, (nv, nh) in enumerate(spec.layers, start=1):
        rbm, history = train_layer(
            nv, nh, data, trainer, budget, derive_seed(seed, k), cd_config, optimizer_kwargs
        )
        layer = LayerResult(rbm=rbm, history=history, train_data=data)
        results.append(layer)
        if on_layer is not None:
            on_layer(k, layer)
        data = hidden_activation(rbm, data)
    return results


def save_checkpoint(path: Path | str, rbm: Rbm) -> None:
    header = CKPT_MAGIC + struct.pack("<II", rbm.n_visible, rbm.n_hidden)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flatten(rbm).astype("<f8").tobytes())


def load_checkpoint(path: Path | str) -> Rbm:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not an RBM checkpoint (magic {raw[:4]!r})")
    nv, nh = struct.unpack("<II", raw[4:12])
    expected = 12 + 8 * param_count(nv, nh)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {nv}x{nh} RBM, found {len(raw)}")
    return unflatten(np.frombuffer(raw[12:], dtype="<f8").astype(float), nv, nh)
