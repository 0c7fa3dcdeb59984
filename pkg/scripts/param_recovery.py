"""Plant parameters in synthetic data, retrain, and check the recovered signs.

    python3 scripts/param_recovery.py --seeds 10 --workers 2
"""

import argparse
import json
import logging
import time

import numpy as np

from expertmatch.core import parallel_map
from expertmatch.rankfg import TrainConfig, train
from expertmatch.synth import SynthConfig, synth_generate

log = logging.getLogger("param_recovery")


def one_run(seed, questions=200, candidates=10, eta=0.01, max_iters=5000):
    t0 = time.perf_counter()
    data = synth_generate(SynthConfig(n_questions=questions, candidates_per_question=candidates, seed=seed))
    res = train(data.graphs, TrainConfig(learning_rate=eta, max_iterations=max_iters))
    planted = data.planted.theta
    learned = res.params.theta
    checked = np.abs(planted) >= 0.5
    return {
        "seed": seed,
        "planted": planted.tolist(),
        "learned": learned.tolist(),
        "signs_ok": bool(np.all(np.sign(learned[checked]) == np.sign(planted[checked]))),
        "iterations": res.iterations,
        "converged": res.converged,
        "seconds": time.perf_counter() - t0,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--questions", type=int, default=200)
    ap.add_argument("--candidates", type=int, default=10)
    ap.add_argument("--eta", type=float, default=0.01)
    ap.add_argument("--max-iters", type=int, default=5000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("expertmatch").setLevel(logging.WARNING)

    runs = parallel_map(_Runner(args), range(args.seeds), args.workers)
    for r in runs:
        log.info("seed %d  signs %s  iters %d  %.1fs  learned %s", r["seed"],
                 "ok" if r["signs_ok"] else "WRONG", r["iterations"], r["seconds"],
                 np.round(r["learned"], 2).tolist())
    ok = sum(r["signs_ok"] for r in runs)
    log.info("all signs correct in %d of %d runs", ok, len(runs))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(runs, fh, indent=2)


class _Runner:
    """Picklable closure over the command-line settings."""

    def __init__(self, args):
        self.kw = dict(questions=args.questions, candidates=args.candidates, eta=args.eta,
                       max_iters=args.max_iters)

    def __call__(self, seed):
        return one_run(seed, **self.kw)


if __name__ == "__main__":
    main()
