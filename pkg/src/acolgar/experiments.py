"""Comparative experiments used by the scripts and the acceptance suite."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import RunConfig
from . import pipeline


def gar_off(cfg: RunConfig) -> RunConfig:
    out = copy.deepcopy(cfg)
    out.gar.c_alpha = out.gar.c_beta = out.gar.c_F = 0.0
    return out


def train_and_score(cfg: RunConfig, out_dir, train_set=None, test_set=None) -> dict:
    start = time.perf_counter()
    train_set = train_set or pipeline.load_split(cfg, "train")
    test_set = test_set or pipeline.load_split(cfg, "test")
    state, tlog = pipeline.run_train(cfg, out_dir, train_set=train_set)
    rep, _ = pipeline.evaluate_network(state.net, test_set, cfg.eval.k, cfg.eval.tap, cfg.eval.restarts, pipeline.kmeans_seed(cfg))
    Path(out_dir, f"report_{cfg.eval.tap}_k{cfg.eval.k}.json").write_text(rep.to_json() + "\n")
    return {
        "acc": rep.acc,
        "final_affinity": tlog[-1].affinity,
        "final_balance": tlog[-1].balance,
        "final_pseudo_acc": tlog[-1].pseudo_acc,
        "seconds": time.perf_counter() - start,
        "state": state,
        "log": tlog,
    }


@dataclass
class Comparison:
    """ACC with the configured GAR weights, with GAR off, and per transform set."""

    acc_gar: float
    acc_no_gar: float
    set_acc: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.acc_gar - self.acc_no_gar

    def to_json(self) -> str:
        return json.dumps(asdict(self) | {"gap": self.gap}, indent=2, sort_keys=True)


def _summary(r: dict) -> dict:
    return {k: v for k, v in r.items() if k not in ("state", "log")}


def compare(cfg: RunConfig, out_dir, sets=()) -> Comparison:
    """Train the configured model, its GAR-off twin, and one model per extra
    transform set (all with the same seed and budget), scoring test ACC."""
    out = Path(out_dir)
    tr = pipeline.load_split(cfg, "train")
    te = pipeline.load_split(cfg, "test")
    on = train_and_score(cfg, out / "gar", tr, te)
    off = train_and_score(gar_off(cfg), out / "no_gar", tr, te)
    res = Comparison(on["acc"], off["acc"], details={"gar": _summary(on), "no_gar": _summary(off)})
    for names in sets:
        sub = pipeline.with_transforms(cfg, list(names))
        label = pipeline.set_label(list(names))
        r = train_and_score(sub, out / label, tr, te)
        res.set_acc[label] = r["acc"]
        res.details[label] = _summary(r)
    (out / "comparison.json").write_text(res.to_json() + "\n")
    return res
