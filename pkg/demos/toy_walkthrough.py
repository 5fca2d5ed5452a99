"""Walk through hybrid optimization on the smooth toy generator.

The toy generator draws a Gaussian bump on a tilted plane.  A target set is
rendered at a known decision vector; the run starts elsewhere and moves the
decision vector by chaining backprop-through-training with a finite
difference Jacobian of the generator.  Basic Random Search then gets the same
number of generator calls for comparison.

    python demos/toy_walkthrough.py [steps]
"""

import sys
from pathlib import Path

import numpy as np

from hybridgen.harness.config import load_config
from hybridgen.harness.experiments import build, run_experiment

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "toy_hybrid.yaml"


def main(steps: int = 100) -> None:
    config = load_config(CONFIG).updated(hybrid={"steps": steps})
    exp = build(config)
    names = exp.pipeline.layout.names
    print("entry               start    target")
    for name, b0, bt in zip(names, exp.start_beta, exp.target_beta):
        print(f"{name:<18}{b0:8.3f}{bt:10.3f}")

    hybrid = run_experiment(config)
    per_step = hybrid.trajectory[0]["generator_calls"]
    print(f"\nhybrid: {steps} outer steps, {per_step} generator calls each")
    for rec in hybrid.trajectory[:: max(1, steps // 10)]:
        print(f"  t={rec['t']:4d}  L={rec['L']:.4f}")
    final = np.array(hybrid.trajectory[-1]["beta"])
    print("\nentry               final    target")
    for name, b, bt in zip(names, final, exp.target_beta):
        print(f"{name:<18}{b:8.3f}{bt:10.3f}")

    # random search makes n (2m + 1) calls per step; give it the same total
    brs_steps = hybrid.state.counters.generator_calls // (config.brs.n * (2 * config.brs.m + 1))
    brs = run_experiment(config.updated(method="brs", brs={"steps": max(1, brs_steps)}))
    print(f"\nbest loss at {hybrid.state.counters.generator_calls} generator calls:")
    print(f"  hybrid         {hybrid.best:.4f}  ({hybrid.state.counters.sgd_steps} SGD steps)")
    print(f"  random search  {brs.best:.4f}  ({brs.state.counters.sgd_steps} SGD steps)")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
