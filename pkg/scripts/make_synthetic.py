"""Write a synthetic network (and optionally DC measurements) as a JSON snapshot.

    python3 scripts/make_synthetic.py 10000 synthetic10k.json --seed 1 --measurements
"""

import argparse

from gridstate.case_io import snapshot_write
from gridstate.measurements import default_template, generate_from_solution
from gridstate.network import build_models
from gridstate.power_flow import solve_power_flow
from gridstate.synthetic import synthetic_network


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("buses", type=int)
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--measurements", action="store_true",
                   help="add DC flow/injection measurements sampled from the DC power flow")
    a = p.parse_args()
    net = synthetic_network(a.buses, a.seed)
    ms = None
    if a.measurements:
        models = build_models(net, ac=False)
        pf = solve_power_flow(net, models, "dc")
        ms = generate_from_solution(net, models.dc, pf.theta,
                                    default_template(net, model="dc", seed=a.seed), a.seed)
    snapshot_write(a.output, net, ms)


if __name__ == "__main__":
    main()
