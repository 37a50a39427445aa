"""End-to-end run orchestration shared by the CLI, scripts, and acceptance tests."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .data import Dataset, SyntheticSpec, data_root, load_idx, make_synthetic, subsample
from .evaluation import ClusterReport, clustering_accuracy, extract_latent, kmeans, project_2d, write_matrix
from .gar import GarConfig
from .graph import build_graph, connected_components, spanning_check, stats_json, write_edges_csv
from .acol import acol_forward
from .layers import ModelSpec
from .tensor import Tensor
from .trainer import AdamConfig, TrainConfig, TrainLog, TrainState, load_checkpoint, stream, train
from .transforms import make_pseudo_batch, parse_transform_set

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.csv"
CONFIG_NAME = "config.json"


# ---------------------------------------------------------------- data

def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def load_split(cfg: RunConfig, split: str) -> Dataset:
    d = cfg.dataset
    if d.kind == "synthetic":
        s = d.synthetic
        per_class = s.train_per_class if split == "train" else s.test_per_class
        spec = SyntheticSpec(
            classes=s.classes, size=s.size, samples_per_class=per_class, noise=s.noise,
            prototype_seed=s.prototype_seed, density=s.density, block=s.block, max_shift=s.max_shift,
        )
        # the data are fixed by the prototype seed; the run seed only moves the model
        rng = np.random.default_rng([s.prototype_seed, 100 if split == "train" else 101])
        ds = make_synthetic(spec, rng, split)
    else:
        img = d.train_images if split == "train" else d.test_images
        lab = d.train_labels if split == "train" else d.test_labels
        if img is None:
            raise FileNotFoundError(f"dataset.{split}_images is not configured")
        ds = load_idx(_resolve(img), _resolve(lab) if lab else None, name=d.name, split=split)
    m = d.train_subsample if split == "train" else d.test_subsample
    if m is not None and m < len(ds):
        ds = subsample(ds, m, d.subsample_seed + (0 if split == "train" else 1))
    return ds


def gar_config(cfg: RunConfig) -> GarConfig:
    g = cfg.gar
    return GarConfig(n_p=cfg.n_p, k_s=g.k_s, c_alpha=g.c_alpha, c_beta=g.c_beta, c_F=g.c_F, eps=g.eps)


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        batch_size=t.batch_size, epochs=t.epochs, seed=cfg.seed,
        adam=AdamConfig(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.adam_eps),
        relabel_every_epoch=t.relabel_every_epoch, checkpoint_every=t.checkpoint_every,
    )


def with_transforms(cfg: RunConfig, names: list[str]) -> RunConfig:
    """Copy of ``cfg`` using another transform set; the ACOL layer is resized to match."""
    out = copy.deepcopy(cfg)
    out.transforms = list(names)
    spec = ModelSpec.parse(cfg.model)
    head = "-".join(str(l) for l in spec.layers[:-1])
    out.model = f"{head}-FC {len(names)}*{cfg.gar.k_s}"
    out.validate()
    return out


# ---------------------------------------------------------------- train

def write_snapshot(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_NAME).write_text(cfg.to_json() + "\n")


def run_train(cfg: RunConfig, out_dir=None, train_set: Optional[Dataset] = None) -> tuple[TrainState, TrainLog]:
    out = Path(out_dir or cfg.output_dir)
    write_snapshot(cfg, out)
    ds = train_set if train_set is not None else load_split(cfg, "train")
    tset = parse_transform_set(cfg.transforms, cfg.transform_params)
    state = TrainState.initial(cfg.model_spec(), ds.image_shape, gar_config(cfg), cfg.seed)
    # the trainer only ever sees pixels
    images = ds.unlabeled().images
    tlog = train(state, images, tset, train_config(cfg), log_path=out / LOG_NAME, checkpoint_path=out / CHECKPOINT_NAME)
    return state, tlog


# ---------------------------------------------------------------- evaluate

def kmeans_seed(cfg: RunConfig) -> int:
    return int(stream(cfg.seed, "kmeans").integers(2**31))


def evaluate_network(net, ds: Dataset, k: int, tap: str, restarts: int, seed: int) -> tuple[ClusterReport, np.ndarray]:
    if ds.labels is None:
        raise ValueError("evaluation needs ground-truth labels")
    feats = extract_latent(net, np.asarray(ds.images), tap)
    km = kmeans(feats, k, restarts=restarts, seed=seed)
    n_classes = int(ds.labels.max()) + 1
    rep = clustering_accuracy(km.assignments, ds.labels, k, n_classes)
    rep.inertia = km.inertia
    rep.seed = seed
    return rep, feats


def write_projection_csv(path, feats: np.ndarray, labels: np.ndarray, clusters: np.ndarray) -> None:
    xy = project_2d(feats) if feats.shape[1] >= 2 else np.column_stack([feats[:, 0], np.zeros(len(feats))])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "label", "cluster"])
        for i, ((x, y), lab, c) in enumerate(zip(xy, labels, clusters)):
            w.writerow([i, repr(float(x)), repr(float(y)), int(lab), int(c)])


def load_state(cfg: RunConfig, checkpoint, ds: Dataset) -> TrainState:
    return load_checkpoint(checkpoint, cfg.model_spec(), ds.image_shape)


def run_evaluate(cfg: RunConfig, checkpoint, out_dir=None, k=None, tap=None, split=None) -> ClusterReport:
    out = Path(out_dir or cfg.output_dir)
    k = cfg.eval.k if k is None else k
    tap = tap or cfg.eval.tap
    split = split or cfg.eval.split
    ds = load_split(cfg, split)
    state = load_state(cfg, checkpoint, ds)
    rep, feats = evaluate_network(state.net, ds, k, tap, cfg.eval.restarts, kmeans_seed(cfg))
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{tap}_k{k}.json").write_text(rep.to_json() + "\n")
    write_projection_csv(out / f"projection_{tap}_k{k}.csv", feats, ds.labels, np.asarray(rep.assignments))
    return rep


# ---------------------------------------------------------------- diagnose

@dataclass
class Diagnosis:
    delta_y: int
    delta_m: int
    spanning_fraction: float
    sample_m: int


def diagnose_network(net, images: np.ndarray, cfg: RunConfig, sample_m: int, q: float, out_dir=None) -> Diagnosis:
    """Graphs over Y·Yᵀ and B·Bᵀ on a pseudo-labelled sample of ``images``."""
    if sample_m > len(images):
        log.warning("sample_m=%d exceeds %d available examples; clamping", sample_m, len(images))
        sample_m = len(images)
    rng = stream(cfg.seed, "sample")
    idx = np.sort(rng.choice(len(images), size=sample_m, replace=False))
    tset = parse_transform_set(cfg.transforms, cfg.transform_params)
    pb = make_pseudo_batch(np.asarray(images)[idx], tset, rng, shuffle=False)
    f, _ = net.forward_latent(Tensor(pb.x), training=False)
    acts = acol_forward(f, net.acol_dense, GarConfig(n_p=net.spec.n_p, k_s=net.spec.k_s))
    g_y = build_graph(acts.Y.data, q=q)
    g_m = build_graph(acts.B.data, q=q)
    st_y = connected_components(g_y)
    st_m = connected_components(g_m)
    span = spanning_check(g_y, g_m)
    st_m.spanning_subgraph = span.is_subset
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_edges_csv(out / "edges_y.csv", g_y)
        write_edges_csv(out / "edges_m.csv", g_m)
        (out / "graph_y.json").write_text(stats_json(st_y, tau=g_y.tau, percentile=q, sample_m=sample_m) + "\n")
        (out / "graph_m.json").write_text(
            stats_json(st_m, tau=g_m.tau, percentile=q, sample_m=sample_m,
                       spanning_fraction=span.fraction, n_p=net.spec.n_p, k_s=net.spec.k_s) + "\n"
        )
    return Diagnosis(st_y.delta, st_m.delta, span.fraction, sample_m)


def run_diagnose(cfg: RunConfig, checkpoint, out_dir=None, sample_m=None, q=None) -> Diagnosis:
    ds = load_split(cfg, "test")
    state = load_state(cfg, checkpoint, ds)
    return diagnose_network(
        state.net, ds.images, cfg,
        cfg.diagnose.sample_m if sample_m is None else sample_m,
        cfg.diagnose.tau_percentile if q is None else q,
        out_dir or cfg.output_dir,
    )


# ---------------------------------------------------------------- export

def run_export(cfg: RunConfig, checkpoint, out_dir=None, tap=None, split=None, with_csv=False) -> Path:
    out = Path(out_dir or cfg.output_dir)
    tap = tap or cfg.eval.tap
    ds = load_split(cfg, split or cfg.eval.split)
    state = load_state(cfg, checkpoint, ds)
    feats = extract_latent(state.net, np.asarray(ds.images), tap)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"latent_{tap}.bin"
    write_matrix(path, feats)
    if with_csv:
        np.savetxt(out / f"latent_{tap}.csv", feats, delimiter=",", fmt="%.17g")
    return path


# ---------------------------------------------------------------- ablate

ABLATION_FIELDS = ("set", "acc_mean", "acc_std")


def set_label(names: list[str]) -> str:
    return "+".join(names)


def run_ablate(cfg: RunConfig, sets: list[list[str]], repeats: int, out_dir=None) -> tuple[list[dict], list[str]]:
    """Train and evaluate one model per transform set and repeat; seed of repeat r
    is ``cfg.seed + r``. The CSV is rewritten after every set so partial results
    survive a failure. Returns the rows and a list of error messages."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out)
    train_ds = load_split(cfg, "train")
    test_ds = load_split(cfg, "test")
    rows, errors = [], []
    for names in sets:
        accs = []
        for r in range(repeats):
            try:
                sub = with_transforms(cfg, names)
                sub.seed = cfg.seed + r
                run_dir = out / set_label(names) / f"rep{r}"
                state, _ = run_train(sub, run_dir, train_set=train_ds)
                rep, _ = evaluate_network(state.net, test_ds, sub.eval.k, sub.eval.tap, sub.eval.restarts, kmeans_seed(sub))
                (run_dir / f"report_{sub.eval.tap}_k{sub.eval.k}.json").write_text(rep.to_json() + "\n")
                accs.append(rep.acc)
            except Exception as exc:  # keep going; the failure is reported at the end
                log.error("ablation set %s repeat %d failed: %s", names, r, exc)
                errors.append(f"{set_label(names)} rep{r}: {exc}")
        rows.append({
            "set": set_label(names),
            "acc_mean": float(np.mean(accs)) if accs else math.nan,
            "acc_std": float(np.std(accs)) if accs else math.nan,
        })
        write_ablation_csv(out / "ablation.csv", rows)
    return rows, errors


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({"set": r["set"], "acc_mean": repr(r["acc_mean"]), "acc_std": repr(r["acc_std"])})
