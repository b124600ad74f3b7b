"""Quasi-steady-state sequence with reuse of models and factorizations.

Step 1 solves and estimates from scratch. Step 2 perturbs a fifth of the
injections, so the DC power flow reuses its factorization outright. Step 3
moves every transformer ratio by 1 %, so the AC solvers refactor in place and
start warm. Each step is compared with a cold run that rebuilds everything.
"""

import numpy as np

from gridstate.case_io import load_case
from gridstate.measurements import default_template, generate_from_solution
from gridstate.network import build_models
from gridstate.power_flow import solve_power_flow
from gridstate.qss import cold_run, run_script

SCRIPT = [
    {"analyses": [{"run": "pf", "method": "dc"}, {"run": "pf", "method": "nr", "tol": 1e-12},
                  {"run": "measure", "seed": 1}, {"run": "se", "tol": 1e-12}]},
    {"changes": [{"perturb": "injections", "fraction": 0.2, "spread": 0.1, "seed": 4}],
     "analyses": [{"run": "pf", "method": "dc"}]},
    {"changes": [{"perturb": "ratio", "percent": 1.0, "seed": 5}],
     "analyses": [{"run": "pf", "method": "nr", "tol": 1e-12},
                  {"run": "measure", "seed": 2}, {"run": "se", "tol": 1e-12}]},
]


def main():
    net = load_case("case118")
    models = build_models(net)
    V = solve_power_flow(net, models, "nr").V
    ms = generate_from_solution(net, models.ac, V, default_template(net, seed=0), seed=0)
    warm = run_script(net, ms, SCRIPT)
    cold = cold_run(net, ms, SCRIPT)
    for sw, sc in zip(warm, cold):
        for a, b in zip(sw.analyses, sc.analyses):
            if a.run == "measure":
                continue
            res_a, res_b = a.result, b.result
            gap = (np.abs(res_a.theta - res_b.theta).max() if a.method == "dc"
                   else np.abs(res_a.V - res_b.V).max())
            flags = {k: v for k, v in a.reuse.items() if k.endswith("_reused") or k == "warm_start"}
            used = [k for k, v in flags.items() if v]
            print(f"step {sw.index} {a.run:2s} {a.method:6s} {a.iterations:2d} it "
                  f"(cold {b.iterations:2d}), gap to cold {gap:.1e}, reused: {', '.join(used) or '-'}")


if __name__ == "__main__":
    main()
