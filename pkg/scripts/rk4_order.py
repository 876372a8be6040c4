"""Observed order of the RK4 integrator.

Two references: the closed-form free flow, and an interacting spring run
against a fine-step solution. Prints errors and successive ratios
(16 is fourth order). The spring ratios come out lower: the cut-off force
is only Lipschitz across |x| = r_cut, so pairs crossing it limit the order.
"""

import logging
import math

import numpy as np

from kinflow import CutoffForce, ForceModel, InitialDensity, MollifiedDrive, advance, sample_initial


def free_errors(dts):
    dens = InitialDensity("product-uniform-box", (0, 0, -1, -1), (1, 1, 1, 1))
    ens = sample_initial(dens, 64, 0)
    cf, md = CutoffForce(ForceModel(k_n=0.0), 64), MollifiedDrive()
    exact = np.column_stack([ens.x + ens.v * (1 - math.exp(-1)), ens.v * math.exp(-1)])
    return [np.abs(advance(ens, cf, md, 1.0, h, stride=10**9)[0].z - exact).max() for h in dts]


def spring_errors(dts):
    dens = InitialDensity("product-uniform-box", (0, 0, -0.5, -0.5), (3, 3, 0.5, 0.5), mass=9.0)
    ens = sample_initial(dens, 64, 1)
    cf = CutoffForce(ForceModel(), 64)
    md = MollifiedDrive.for_particles(64, kind="gaussian-well", amplitude=0.5,
                                      center=(1.5, 1.5), width=1.0)
    ref = advance(ens, cf, md, 0.5, min(dts) / 8, stride=10**9)[0].z
    return [np.abs(advance(ens, cf, md, 0.5, h, stride=10**9)[0].z - ref).max() for h in dts]


def show(name, dts, errs):
    print(name)
    for k, (h, e) in enumerate(zip(dts, errs)):
        ratio = f"{errs[k - 1] / e:6.2f}" if k else ""
        print(f"  dt={h:<8g} err={e:.3e} {ratio}")


def main():
    logging.getLogger("kinflow").setLevel(logging.ERROR)
    dts = [1e-2, 5e-3, 2.5e-3]
    show("free flow vs closed form", dts, free_errors(dts))
    dts = [2e-2, 1e-2, 5e-3]
    show("spring model vs fine-step reference", dts, spring_errors(dts))


if __name__ == "__main__":
    main()
