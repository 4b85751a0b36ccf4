#!/usr/bin/env python3
"""Lookahead slope L against snippet offset, for videos that open with blank frames.

Uses a net trained by step_sweep.py (``--net``) or trains the same one.
"""

import argparse
import logging
from pathlib import Path

from borderlrp.analysis import sweep_offset
from borderlrp.network import mini_c3d
from borderlrp.persist import load_network, write_sweep_csv
from borderlrp.synthlab import SynthConfig, TrainConfig, generate_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--net", type=Path)
    ap.add_argument("--opening-frames", type=int, default=12)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.net:
        net = load_network(args.net)
    else:
        data = generate_dataset(SynthConfig(noise_std=0.05, seed=11), 64)
        config = TrainConfig(learning_rate=0.05, epochs=15, batch_size=8, seed=1, offsets=(0, 24, 48))
        net = train(mini_c3d(seed=3), data, config)

    videos = generate_dataset(
        SynthConfig(noise_std=0.05, seed=13, frames=112, opening_frames=args.opening_frames), 32
    )
    rows = sweep_offset(net, videos, offsets=range(0, 97, 8), jobs=args.jobs)
    for r in rows:
        print(f"offset {r.offset:3d}  L={r.L:+.5f}  B={r.B:+.5f}")

    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out / "offset_sweep.csv", rows)


if __name__ == "__main__":
    main()
