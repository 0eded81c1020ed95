"""Calibrate the scripted base controllers against their toy tasks.

Prints base-only success per environment (target: roughly half of the
episodes) and, for point-insert-2d, the success of the base plus a constant
lateral residual over a grid. Success should rise monotonically toward one
residual bound so a learned correction has a clean direction to move in.

    python3 demos/calibrate_base.py [--episodes 1000]
"""

import argparse

import numpy as np

from dawnlab.basepolicy import make_base_policy, rollout_success
from dawnlab.envs import make_env


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--lam", type=float, default=0.1)
    args = p.parse_args()
    seeds = range(args.episodes)

    for env_id in ("point-insert-2d", "reach-nd", "drift-push"):
        env = make_env(env_id)
        rate = rollout_success(env, make_base_policy(env_id, env), seeds).mean()
        print(f"{env_id:<16} base success {rate:.3f}")

    env = make_env("point-insert-2d")
    base = make_base_policy("point-insert-2d")
    print(f"\npoint-insert-2d, constant residual (0, r_y) at lambda={args.lam}")
    for r_y in np.linspace(-1, 1, 9):
        res = lambda obs, r_y=r_y: np.tile([0.0, args.lam * r_y], (len(obs), 1))
        rate = rollout_success(env, base, seeds, residual=res).mean()
        print(f"  r_y={r_y:+.2f}  success {rate:.3f}")


if __name__ == "__main__":
    main()
