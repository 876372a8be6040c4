"""Run the energy, second-moment, maximum-principle and mass certificates.

Prints the derived constants and one line per certificate for each config
given (default: the spring energy and maximum-principle scenarios).
"""

import argparse
import time
from pathlib import Path

from kinflow.cli import certificates_for, run_trajectory
from kinflow.config import parse_config
from kinflow.diagnostics import certify_all

ROOT = Path(__file__).resolve().parents[1]
DEFAULTS = [ROOT / "configs" / "spring_energy.toml", ROOT / "configs" / "max_principle.toml"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("configs", nargs="*", type=Path, default=DEFAULTS)
    args = p.parse_args()
    for path in args.configs:
        cfg = parse_config(path)
        start = time.perf_counter()
        ens0, _, recs = run_trajectory(cfg)
        certs = certificates_for(cfg, ens0)
        print(f"== {path.name}: N={ens0.n}, t={recs[-1].t:g}, "
              f"{time.perf_counter() - start:.1f}s")
        print(f"   A={certs.A:.4g}  E_cap={certs.E_cap:.4g}  C_max={certs.C_max:.4g}  "
              f"E0={certs.E0:.4g}  m2(0)={certs.m2_0:.4g}")
        for r in certify_all(recs, certs):
            print("  ", r.line())


if __name__ == "__main__":
    main()
