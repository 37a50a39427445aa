"""Desk-scale MNIST comparison: GAR vs GAR-off, and {identity, rot180} vs
{identity, translate}, all at the same seed and epoch budget.

    ACOLGAR_DATA_ROOT=data python3 scripts/run_desk_mnist.py --config configs/mnist_desk.json
"""

import argparse
import logging

from acolgar.config import load_config
from acolgar.experiments import compare

SETS = (("identity", "rot180"), ("identity", "translate"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/mnist_desk.json")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, args.set)
    res = compare(cfg, args.out or cfg.output_dir, SETS)
    rot, tra = (res.set_acc["+".join(s)] for s in SETS)
    print(f"ACC with GAR      {res.acc_gar:.4f}  (target >= 0.60)")
    print(f"ACC without GAR   {res.acc_no_gar:.4f}  (target < ACC with GAR)")
    print(f"identity+rot180   {rot:.4f}")
    print(f"identity+translate {tra:.4f}  (target: rot180 - translate >= 0.15, got {rot - tra:.4f})")


if __name__ == "__main__":
    main()
