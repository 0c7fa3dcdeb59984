"""Compare every ranking method on one dataset with repeated 60/40 splits.

Without ``--data`` a synthetic dataset is generated first.

    python3 scripts/compare_methods.py --repetitions 10
    python3 scripts/compare_methods.py --data path/to/dataset --workers 4
"""

import argparse
import logging

from expertmatch.core import load_dataset
from expertmatch.embedding import load_vectors
from expertmatch.evaluation import build_question_data, run_experiment
from expertmatch.features import FeatureConfig, FeatureContext
from expertmatch.rankfg import TrainConfig
from expertmatch.synth import SynthConfig, synth_generate

METHODS = ("jaccard", "qtoe", "lm", "rankfg-nocorr", "rankfg")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", help="dataset directory with vectors.txt")
    ap.add_argument("--repetitions", type=int, default=10)
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--max-iters", type=int, default=500)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    if args.data:
        ds = load_dataset(args.data)
        ctx = FeatureContext(ds, load_vectors(f"{args.data}/vectors.txt"), FeatureConfig())
    else:
        synth = synth_generate(SynthConfig(seed=args.seed))
        ds = synth.dataset
        ctx = FeatureContext(ds, synth.embeddings, synth.config.feature_config)
    data = build_question_data(ds, ctx, args.workers)
    cfg = TrainConfig(learning_rate=args.eta, max_iterations=args.max_iters, seed=args.seed)

    names = None
    for method in METHODS:
        rep = run_experiment(ds, method, data=data, repetitions=args.repetitions, base_seed=args.seed,
                             train_config=cfg, workers=args.workers)
        if names is None:
            names = list(rep.metrics)
            print("method".ljust(16) + "".join(n.rjust(9) for n in names))
        print(method.ljust(16) + "".join(f"{100 * rep.metrics[n]:9.1f}" for n in names))


if __name__ == "__main__":
    main()
