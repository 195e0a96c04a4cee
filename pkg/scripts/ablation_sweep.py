#!/usr/bin/env python3
"""Ablate the two stabilizers and compare median final values per shots level.

Variants: full engine, no-FSM (vote threshold 1, every proposal commits
immediately), and no-IQR (dispersion penalty removed from the robust score).
"""

from __future__ import annotations

import argparse
from dataclasses import replace

import numpy as np

from auditloop import FsmParams, SmoothingParams, default_run_config, run_full


VARIANTS = {
    "full": lambda cfg: cfg,
    "no-fsm": lambda cfg: replace(cfg, fsm=FsmParams(tau_act=1, tau_rank=1)),
    "no-iqr": lambda cfg: replace(
        cfg, smoothing=SmoothingParams(beta=cfg.smoothing.beta, lambda_s=0.0)
    ),
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--seed-offset", type=int, default=0)
    args = parser.parse_args()

    header = f"{'shots':>6}" + "".join(f"{name:>10}" for name in VARIANTS)
    print(header + f"{'t_c(full)':>11}")
    for shots in (1, 5, 10):
        medians = {}
        tcs = []
        for name, mod in VARIANTS.items():
            finals = []
            for seed in range(args.seed_offset, args.seed_offset + args.seeds):
                cfg = mod(default_run_config(shots=shots, run_seed=seed))
                rep, _ = run_full(cfg)
                finals.append(rep.final_value)
                if name == "full":
                    tcs.append(rep.t_c)
            medians[name] = float(np.median(finals))
        row = f"{shots:>6}" + "".join(f"{medians[n]:>10.4f}" for n in VARIANTS)
        print(row + f"{np.median(tcs):>11.0f}")


if __name__ == "__main__":
    main()
