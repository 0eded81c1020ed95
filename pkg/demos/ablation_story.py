"""DAWN against its two ablations on point-insert-2d, diagnostics side by side.

A shorter budget than the acceptance suite (default 40K env steps, one
seed) so it finishes in a few minutes. For each variant it prints success
rate, grounding error, critic sensitivity and value difference at a few
checkpoints, then writes the suite to ``runs/ablation-story`` and renders
the figures from its summary.

    python3 demos/ablation_story.py [--steps 40000] [--seeds 1]
"""

import argparse

from dawnlab.harness import FIGURES, build_suite, plot, read_metrics, run_suite

METRICS = ("success_rate", "grounding_error", "sensitivity", "value_difference")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--steps", type=int, default=40_000)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", default="runs/ablation-story")
    args = p.parse_args()

    suite = build_suite("component-ablation", "desk", args.seeds, args.out,
                        total_steps=args.steps, eval_every=args.steps // 5)
    outcome = run_suite(suite, workers=1)

    for cfg in suite.variants:
        rows = read_metrics(outcome.root / cfg.variant / "seed_0" / "metrics.csv")
        table = {}
        for step, _, _, metric, value in rows:
            if metric in METRICS:
                table.setdefault(step, {})[metric] = value
        print(f"\n{cfg.variant}")
        print(f"  {'step':>7}" + "".join(f"{m:>18}" for m in METRICS))
        for step in sorted(table):
            print(f"  {step:>7}" + "".join(f"{table[step].get(m, float('nan')):>18.4f}" for m in METRICS))

    for fig in FIGURES:
        plot(outcome.summary, fig)
    print(f"\nfigures written next to {outcome.summary}")


if __name__ == "__main__":
    main()
