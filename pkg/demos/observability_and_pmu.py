"""Observability analysis and PMU placement on the 14-bus case.

Builds a sparse active power measurement set, reports the flow and maximal
observable islands, restores observability with pseudo-measurements and
places PMUs with and without the legacy set.
"""

from gridstate.case_io import load_case
from gridstate.measurements import Measurement, MeasurementSet
from gridstate.observability import (find_flow_islands, find_maximal_islands, place_pmus,
                                     restore_observability)


def main():
    net = load_case("case14")
    ms = MeasurementSet(
        [Measurement(f"f{k}", "pflow", k, "from", 0.0, 1e-4) for k in (1, 3, 7, 10, 13, 16, 19)]
        + [Measurement(f"i{b}", "pinj", b, "-", 0.0, 1e-4) for b in (7, 11, 14)])
    flow = find_flow_islands(net, ms)
    maximal = find_maximal_islands(net, ms, flow)
    print(f"flow islands ({flow.count}): {flow.islands}")
    print(f"maximal islands ({maximal.count}): {maximal.islands}")

    pseudo = MeasurementSet(
        [Measurement(f"pi{b.id}", "pinj", b.id, "-", 0.0, 1e-2) for b in net.buses]
        + [Measurement(f"pa{b.id}", "vphasor_ang", b.id, "-", 0.0, 1e-2, coordinates="polar")
           for b in net.buses])
    rest = restore_observability(net, maximal, ms, pseudo)
    print(f"pseudo-measurements selected: {rest.selected} (observable = {rest.observable})")

    plain = place_pmus(net)
    print(f"\nPMU placement without legacy data: {plain.buses}")
    with_legacy = place_pmus(net, ms)
    print(f"PMU placement counting the legacy set: {with_legacy.buses}")


if __name__ == "__main__":
    main()
