"""Free streaming with damping against its closed form.

With the interaction and the drive switched off, x(t) = x0 + v0 (1 - e^-t),
v(t) = v0 e^-t, E(t) = E0 e^-2t and every log-Jacobian equals -2t.
"""

import argparse
import math
from pathlib import Path

import numpy as np

from kinflow.cli import run_trajectory
from kinflow.config import parse_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=ROOT / "configs" / "decoupled.toml")
    args = p.parse_args()
    cfg = parse_config(Path(args.config))
    ens0, fin, recs = run_trajectory(cfg)
    t = fin.time
    exact = np.column_stack([ens0.x + ens0.v * (1 - math.exp(-t)), ens0.v * math.exp(-t)])
    print(f"t = {t:g}, N = {fin.n}")
    print(f"max |state error|        {np.abs(fin.z - exact).max():.3e}")
    print(f"E(t) / (E0 e^-2t) - 1    {recs[-1].kinetic / (recs[0].kinetic * math.exp(-2 * t)) - 1:.3e}")
    print(f"max |L + 2t|             {np.abs(fin.log_jacobian + 2 * t).max():.3e}")


if __name__ == "__main__":
    main()
