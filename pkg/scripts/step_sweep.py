#!/usr/bin/env python3
"""Train on the bar-motion task at step 1, then sweep the step size on held-out videos."""

import argparse
import logging
from pathlib import Path

from borderlrp.analysis import sweep_step
from borderlrp.network import mini_c3d
from borderlrp.persist import save_network, write_sweep_csv
from borderlrp.sampler import format_step, step_schedule
from borderlrp.synthlab import SynthConfig, TrainConfig, generate_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--topk", type=int, default=1)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = generate_dataset(SynthConfig(noise_std=0.05, seed=11), 64)
    held_out = generate_dataset(SynthConfig(noise_std=0.05, seed=12), 64)
    config = TrainConfig(learning_rate=0.05, epochs=15, batch_size=8, seed=1, offsets=(0, 24, 48))
    net = train(mini_c3d(seed=3), data, config)

    rows = sweep_step(net, held_out, schedule=step_schedule(), topk=args.topk, jobs=args.jobs)
    print(f"{'step':>5} {'B':>9} {'L':>9} {'acc':>6}")
    for r in rows:
        print(f"{format_step(r.step):>5} {r.B:+9.5f} {r.L:+9.5f} {r.topk_acc:6.3f}")

    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out / "step_sweep.csv", rows)
    save_network(args.out / "motion_net.vxtc", net)


if __name__ == "__main__":
    main()
