"""Pseudo-supervised training loop: cross-entropy on pseudo parent labels plus
the GAR penalty, optimised with Adam."""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .acol import acol_forward
from .gar import GarConfig, gar_total
from .layers import ModelSpec, Network, ParamSet, parameter_layout
from .tensor import GradTape, Tensor
from .transforms import TransformSet, make_pseudo_batch

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ACOLCKPT"
CHECKPOINT_VERSION = 1
LOG_FIELDS = ("epoch", "loss", "ce", "affinity", "balance", "frob", "pseudo_acc", "seconds")
STREAMS = {"init": 1, "labels": 2, "dropout": 3, "kmeans": 4, "sample": 5}


class TrainingDiverged(FloatingPointError):
    """Loss became NaN/Inf; the message carries batch statistics."""


class CheckpointError(ValueError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Named RNG substream derived from the root seed."""
    return np.random.default_rng([seed, STREAMS[name]])


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 400
    epochs: int = 100
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    relabel_every_epoch: bool = True
    checkpoint_every: int = 0

    def validate(self, n_p: int) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < n_p:
            raise ValueError(f"batch size {self.batch_size} smaller than n_p={n_p}")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "AdamState":
        return cls([np.zeros(t.shape) for t in params.tensors], [np.zeros(t.shape) for t in params.tensors], 0)


def adam_step(params: list, grads: list, state: AdamState, hp: AdamConfig) -> None:
    """Bias-corrected Adam update, in place on parameters and moments."""
    state.step += 1
    t = state.step
    c1 = 1.0 - hp.beta1**t
    c2 = 1.0 - hp.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * g * g
        p.data -= hp.lr * (m / c1) / (np.sqrt(v / c2) + hp.eps)


def supervised_loss(y: Tensor, labels: np.ndarray, eps: float = 1e-12) -> Tensor:
    """Mean negative log-likelihood of the labelled parent."""
    labels = np.asarray(labels)
    m, n_p = y.shape
    if labels.shape != (m,) or labels.min() < 0 or labels.max() >= n_p:
        raise ValueError(f"labels must be {m} integers in [0, {n_p})")
    onehot = np.zeros((m, n_p))
    onehot[np.arange(m), labels] = 1.0
    picked = T.sum(T.mul(y, Tensor(onehot)), axis=1)
    return T.mul_scalar(T.sum(T.log(T.add_scalar(picked, eps))), -1.0 / m)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    ce: float
    affinity: float
    balance: float
    frob: float
    pseudo_acc: float
    seconds: float


@dataclass
class TrainState:
    net: Network
    adam: AdamState
    gar: GarConfig
    rng_labels: np.random.Generator
    rng_dropout: np.random.Generator
    epoch: int = 0

    @classmethod
    def initial(cls, spec: ModelSpec, input_shape, gar: GarConfig, seed: int) -> "TrainState":
        net = Network.create(spec, input_shape, stream(seed, "init"))
        return cls(net, AdamState.zeros_like(net.params), gar, stream(seed, "labels"), stream(seed, "dropout"))


def _batch_stats(x: np.ndarray, acts) -> str:
    z = acts.Z.data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN slices are the point here
        return _format_stats(x, z, acts.B.data)


def _format_stats(x, z, b) -> str:
    return (
        f"input mean={x.mean():.4g} std={x.std():.4g}; "
        f"Z min={np.nanmin(z):.4g} max={np.nanmax(z):.4g} nan={int(np.isnan(z).sum())}; "
        f"B row-norm max={np.nanmax(np.linalg.norm(b, axis=1)):.4g}"
    )


def train_step(state: TrainState, xb: np.ndarray, tb: np.ndarray, hp: AdamConfig) -> dict:
    params = state.net.params
    params.zero_grad()
    with GradTape() as tape:
        f, f_drop = state.net.forward_latent(Tensor(xb), training=True, rng=state.rng_dropout)
        acts = acol_forward(f_drop, state.net.acol_dense, state.gar)
        ce = supervised_loss(acts.Y, tb)
        terms = gar_total(acts.B, state.gar)
        loss = T.add(ce, terms.total)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite loss at epoch {state.epoch + 1}: {_batch_stats(xb, acts)}")
        tape.backward(loss)
    tape.clear()
    adam_step(params.tensors, [p.grad for p in params.tensors], state.adam, hp)
    return {
        "loss": loss.item(),
        "ce": ce.item(),
        "affinity": terms.affinity.item(),
        "balance": terms.balance.item(),
        "frob": terms.frobenius_sq.item(),
        "correct": int((acts.Y.data.argmax(axis=1) == tb).sum()),
    }


def train_epoch(state: TrainState, images: np.ndarray, tset: TransformSet, cfg: TrainConfig) -> EpochRecord:
    """One pass over freshly pseudo-labelled data in ceil(m/b) shuffled batches."""
    start = time.perf_counter()
    labels = None
    if not cfg.relabel_every_epoch:
        labels = stream(cfg.seed, "labels").integers(0, tset.n_p, size=len(images))
    pb = make_pseudo_batch(images, tset, state.rng_labels, labels=labels)
    n_batches = max(1, int(np.ceil(len(images) / cfg.batch_size)))
    sums = {"loss": 0.0, "ce": 0.0, "affinity": 0.0, "balance": 0.0, "frob": 0.0}
    correct = 0
    for idx in np.array_split(np.arange(len(images)), n_batches):
        out = train_step(state, pb.x[idx], pb.t[idx], cfg.adam)
        for k in sums:
            sums[k] += out[k]
        correct += out["correct"]
    state.epoch += 1
    return EpochRecord(
        epoch=state.epoch,
        **{k: v / n_batches for k, v in sums.items()},
        pseudo_acc=correct / len(images),
        seconds=time.perf_counter() - start,
    )


class TrainLog:
    def __init__(self, records: Optional[list] = None):
        self.records: list[EpochRecord] = list(records or [])

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch index must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def rows(self, include_time: bool = True) -> list[tuple]:
        fields = LOG_FIELDS if include_time else LOG_FIELDS[:-1]
        return [tuple(getattr(r, f) for f in fields) for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in LOG_FIELDS[1:]])

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[f]) for f in LOG_FIELDS[1:])) for r in rows])


def train(
    state: TrainState,
    images: np.ndarray,
    tset: TransformSet,
    cfg: TrainConfig,
    log_path=None,
    checkpoint_path=None,
    epochs: Optional[int] = None,
) -> TrainLog:
    """Run ``epochs`` (default ``cfg.epochs``) further epochs from ``state``."""
    cfg.validate(tset.n_p)
    if state.gar.n_p != tset.n_p:
        raise ValueError(f"GAR n_p={state.gar.n_p} but the transform set has {tset.n_p} entries")
    tlog = TrainLog()
    for _ in range(cfg.epochs if epochs is None else epochs):
        rec = train_epoch(state, images, tset, cfg)
        tlog.append(rec)
        log.info(
            "epoch %d loss=%.4f ce=%.4f aff=%.4f bal=%.4f acc=%.3f (%.1fs)",
            rec.epoch, rec.loss, rec.ce, rec.affinity, rec.balance, rec.pseudo_acc, rec.seconds,
        )
        if log_path is not None:
            tlog.write_csv(log_path)
        if checkpoint_path is not None and cfg.checkpoint_every and rec.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return tlog


# ---------------------------------------------------------------- checkpoints
#
# layout: MAGIC(8) | version u32 | header_len u32 | header JSON | float64 LE blobs
# blobs: every parameter, then Adam m, then Adam v, all in declaration order.

def save_checkpoint(state: TrainState, path) -> None:
    params = state.net.params
    header = {
        "spec": str(state.net.spec),
        "input_shape": list(state.net.input_shape),
        "epoch": state.epoch,
        "adam_step": state.adam.step,
        "gar": asdict(state.gar),
        "rng_labels": state.rng_labels.bit_generator.state,
        "rng_dropout": state.rng_dropout.bit_generator.state,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for arrs in (params.tensors, state.adam.m, state.adam.v):
            for a in arrs:
                data = a.data if isinstance(a, Tensor) else a
                fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse_header(raw, path)[0]


def _parse_header(raw: bytes, path):
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    return header, 16 + hlen


def load_checkpoint(path, spec: Optional[ModelSpec] = None, input_shape=None) -> TrainState:
    """Restore a :class:`TrainState`. When ``spec``/``input_shape`` are given the
    stored parameters must fit them exactly."""
    raw = Path(path).read_bytes()
    header, off = _parse_header(raw, path)
    stored_spec = ModelSpec.parse(header["spec"])
    spec = spec or stored_spec
    shape = tuple(input_shape or header["input_shape"])

    layout = parameter_layout(spec, shape)
    stored = header["params"]
    for (name, eshape, _), s in zip(layout, stored):
        if name != s["name"] or tuple(eshape) != tuple(s["shape"]):
            raise T.ShapeError(
                f"checkpoint parameter {s['name']} has shape {tuple(s['shape'])}; model expects {name} with shape {tuple(eshape)}"
            )
    if len(layout) != len(stored):
        raise T.ShapeError(f"checkpoint has {len(stored)} parameters, model expects {len(layout)}")
    sizes = [int(np.prod(s["shape"])) for s in stored]
    need = off + 8 * 3 * sum(sizes)
    if len(raw) != need:
        raise CheckpointError(f"{path}: payload is {len(raw)} bytes, expected {need} (truncated or padded)")

    def take(count, shp):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shp).astype(np.float64)
        off += 8 * count
        return arr

    shapes = [tuple(s["shape"]) for s in stored]
    params = ParamSet()
    for s, n, shp in zip(stored, sizes, shapes):
        params.add(s["name"], Tensor(take(n, shp), requires_grad=True))
    m = [take(n, shp) for n, shp in zip(sizes, shapes)]
    v = [take(n, shp) for n, shp in zip(sizes, shapes)]

    def rng_from(st):
        g = np.random.default_rng()
        g.bit_generator.state = st
        return g

    net = Network(spec, shape, params)
    return TrainState(
        net=net,
        adam=AdamState(m, v, header["adam_step"]),
        gar=GarConfig(**header["gar"]),
        rng_labels=rng_from(header["rng_labels"]),
        rng_dropout=rng_from(header["rng_dropout"]),
        epoch=header["epoch"],
    )
