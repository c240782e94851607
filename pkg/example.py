import logging

from sharing_club.analytics import (
    MeanFieldModel, control_parameter, critical_k_rho, critical_population, fixed_points, success_rate, verdict
)
from sharing_club.domain import ClubParams, aggregate_demand, aggregate_supply
from sharing_club.simulator import SimConfig, ensemble
from sharing_club.specfiles import bundled, load_spec
from sharing_club.sweeps import phase_field


def main():
    # Six friends sharing music, two chunks each
    bundle = load_spec(bundled("music_club.json"))
    pop, params = bundle.population, bundle.params
    print(pop)
    print("supply", aggregate_supply(pop))
    print("demand", aggregate_demand(pop))

    model = MeanFieldModel(pop, params)
    print(f"pi = {control_parameter(model):.4f}, {verdict(model).value}")
    print(f"critical k*rho = {critical_k_rho(model):.4f}")
    for p in fixed_points(model):
        print(f"  n = {p.n_eq:.3f}, P = {p.p_bar:.4f}, stable = {p.stable}")

    # Alfred alone against the rest of the club, at k*rho = 1
    half = model.with_params(ClubParams(0.5))
    print(f"Alfred's success rate with 6 members: {success_rate(half, 0, 6):.4f}")


def main2():
    # Composite requests: the club needs a critical population
    bundle = load_spec(bundled("zipf_bistable_d2.json"))
    model = bundle.model
    print(critical_population(model))
    for p in fixed_points(model):
        print(f"  n = {p.n_eq:.3f}, stable = {p.stable}")
    print(phase_field(model, 21))


def main3():
    bundle = load_spec(bundled("music_club.json"))
    cfg = SimConfig(seed=2024, rounds=500, burn_in=50, self_supply=True)
    summary = ensemble(bundle.population, bundle.params, cfg, 20, 0.5)
    print(f"mean equilibrium fraction {summary.mean_equilibrium:.3f}, {summary.phase_counts}")
    print(summary.to_frame().tail())


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    main()
    # main2()
    # main3()
