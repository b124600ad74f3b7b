"""Power flow and DC dispatch on the bundled cases.

Runs every AC method from a flat start on the 14-bus case, compares the
results, then solves the DC power flow and a DC optimal dispatch with
piecewise-linear costs on the 30-bus case.
"""

import numpy as np

from gridstate.case_io import load_case
from gridstate.dc_opf import solve_dc_opf
from gridstate.network import build_models
from gridstate.power_flow import PowerFlowState, solve_power_flow


def main():
    net = load_case("case14")
    models = build_models(net)
    print(f"{net.name}: {net.n_bus} buses, {len(net.branches)} branches")
    ref = None
    for method in ("nr", "fdxb", "fdbx", "gs"):
        rep = solve_power_flow(net, models, method, flat=True)
        ref = rep.V if ref is None else ref
        print(f"  {method:5s} {rep.status:10s} {rep.iterations:4d} iterations, "
              f"max |V - V_nr| = {np.abs(rep.V - ref).max():.1e}")

    # a load change: fast decoupled keeps its factors, Newton-Raphson starts warm
    state = PowerFlowState()
    solve_power_flow(net, models, "fdxb", state, flat=True)
    net.buses[3].p_load *= 1.1
    rep = solve_power_flow(net, models, "fdxb", state)
    print(f"  after a 10 % load step at bus 4: {rep.iterations} iterations, "
          f"factors reused = {rep.reuse.factor_reused}")

    net30 = load_case("case30pwl")
    h30 = build_models(net30, ac=False)
    dc = solve_power_flow(net30, h30, "dc")
    print(f"\n{net30.name}: DC angles span {np.degrees(np.ptp(dc.theta)):.2f} degrees")
    opf = solve_dc_opf(net30, h30.dc)
    print(f"  DC OPF {opf.status}, cost {opf.objective:.2f}, "
          f"dispatch {np.round(opf.dispatch, 3).tolist()}")
    print(f"  nodal prices range {opf.prices.min():.3f} .. {opf.prices.max():.3f}")


if __name__ == "__main__":
    main()
