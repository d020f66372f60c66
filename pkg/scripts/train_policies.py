#!/usr/bin/env python3
"""Train both Q-networks and drop weight + reward-log files under policies/.

Equivalent to `gridswarm train-conflict` followed by `gridswarm train-free`;
the tuned budgets live in gridswarm.cli so the CLI, this script, and the
test suite all train the same way.
"""

import argparse
from pathlib import Path

from gridswarm import qnet
from gridswarm.cli import CONFLICT_TRAIN_DEFAULTS, FREE_TRAIN_DEFAULTS, splitmix64


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="policies")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = qnet.TrainerConfig(**CONFLICT_TRAIN_DEFAULTS)
    net, log = qnet.train_conflict_selfplay(cfg, n_agents=2,
                                            seed=splitmix64(args.seed, 2))
    qnet.save_weights(net, out / "conflict.qnet")
    qnet.save_reward_log(log, out / "conflict_rewards.csv")
    rate = qnet.evaluate_conflict_policy(net, n_cases=2000, seed=args.seed + 1)
    print(f"conflict: final block reward {log[-1][1]:.3f}, avoidance {rate:.4f}")

    cfg = qnet.TrainerConfig(**FREE_TRAIN_DEFAULTS)
    net, log = qnet.train_free(cfg, seed=args.seed)
    qnet.save_weights(net, out / "free.qnet")
    qnet.save_reward_log(log, out / "free_rewards.csv")
    print(f"free: final block reward {log[-1][1]:.3f}")
    print(f"weights in {out}/")


if __name__ == "__main__":
    main()
