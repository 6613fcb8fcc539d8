"""Independent-normal toy: SmoothHMC and the hard-max baseline against the analytic oracle.

    python3 scripts/run_toy.py [--warmup 10000 --iters 10000 --k 10 --eps 0.1] [--out results/toy.json]
"""
import argparse
import time


from tempimpute.experiments import boundary_masses, run_toy
from tempimpute.io import write_json
from tempimpute.smoothhmc import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--chains", type=int, default=4)
    ap.add_argument("--warmup", type=int, default=10_000)
    ap.add_argument("--iters", type=int, default=10_000)
    ap.add_argument("--k", type=float, default=10.0)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hard-init", default="uniform", choices=["uniform", "prior", "feasible"])
    ap.add_argument("--skip-hard", action="store_true")
    ap.add_argument("--out", default="results/toy.json")
    a = ap.parse_args()
    cfg = SamplerConfig(chains=a.chains, warmup=a.warmup, iters=a.iters, k=a.k, eps=a.eps, seed=a.seed)
    report = {"config": vars(a)}
    t0 = time.time()
    probs, smooth = run_toy(cfg)
    report["smoothhmc"] = smooth.summary() | {"seconds": time.time() - t0, "ks": smooth.ks}
    bm = boundary_masses(smooth.draws, 22, 51)
    report["boundary_23_52"] = {"sampled": bm, "oracle_row_23": probs.row[22], "oracle_col_52": probs.col[51]}
    print(f"smoothhmc: {smooth.summary()}")
    print(f"boundary masses: {bm}  oracle row23={probs.row[22]:.5f} col52={probs.col[51]:.5f}")
    if not a.skip_hard:
        t0 = time.time()
        _, hard = run_toy(cfg, hard=True, hard_init=a.hard_init)
        report["hard"] = hard.summary() | {"seconds": time.time() - t0}
        print(f"hard: {hard.summary()}")
    write_json(a.out, report)


if __name__ == "__main__":
    main()
