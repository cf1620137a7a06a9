# coding: utf-8
"""
Full reduced-state LQR gain against the gain designed on the unstable block
only, over a range of control penalties, on the nonlinear Hopf plant started
from its limit cycle.
"""
from multiprocessing import Pool
import logging
from pathlib import Path
import sys

import numpy as np
import pandas as pd

sys.path.append('../src')

from balanced_pod_tools import Compensator, HopfPlant, balanced_truncation_unstable, closed_loop_simulate, load_config
from balanced_pod_tools import newton_gmres
from balanced_pod_tools.control import input_energy, lqr_gain, lqr_gain_unstable_only
from balanced_pod_tools.errors import NumericalError
from balanced_pod_tools.io import write_table

# processor count to utilize
num_processors = 8

# control penalties R = c I to try
penalties = [1.0e3, 1.0e4, 1.0e5, 1.0e6]

cfg = load_config(Path(__file__).parent.parent / 'config' / 'settings.yml')
dir_out = Path(cfg.output_dir) / 'sweeps'


def run_gain(args):
    """Closed-loop run for one (penalty, gain kind) pair."""
    c, kind, model, base = args
    plant = HopfPlant(cfg.testbed)
    system = plant.nonlinear_system(base)
    row = {'c': c, 'gain': kind, 'status': 'design-failed', 'final_energy': np.nan, 'input_energy': np.nan}
    try:
        design = lqr_gain if kind == 'full' else lqr_gain_unstable_only
        gain = design(model, c=c, output_weight=system.output_weight)
        comp = Compensator(model, gain.K)
    except NumericalError as err:
        print(f'c={c:g} {kind}: {err}')
        return row

    sim = cfg.simulate
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(base.size)
    x0 = base + sim.perturbation * noise / system.weight.norm(noise)
    trace = closed_loop_simulate(system, comp, 'full-state', x0, sim.dt, sim.horizon, base, sim.turn_on[0],
                                 sim.record_every, sim.blowup)
    row.update(status=trace.status, final_energy=trace.energy[-1], input_energy=input_energy(trace))
    print(f'finished c={c:g} {kind}')
    return row


if __name__ == '__main__':

    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    dir_out.mkdir(parents=True, exist_ok=True)

    plant = HopfPlant(cfg.testbed)
    base, _ = newton_gmres(plant.fixed_point_problem(cfg.steady.dt, cfg.steady.T), np.zeros(plant.n))
    sn = cfg.snapshots
    model = balanced_truncation_unstable(plant.linear_system(base), cfg.model.r, cfg.model.m, sn.dt, sn.n_steps,
                                         sn.spacing).model

    jobs = [(c, kind, model, base) for c in penalties for kind in ('full', 'unstable-only')]

    # Create a pool of processors
    p = Pool(processes=num_processors)

    # get them to work in parallel
    rows = p.map(run_gain, jobs)

    write_table(dir_out / 'unstable_gain_comparison.csv', pd.DataFrame(rows))
