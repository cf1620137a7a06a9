# coding: utf-8
"""
Hankel singular values of the Hopf plant for several output-projection orders.

Writes one HSV table per order and a side-by-side table of the leading values
to ``<output_dir>/sweeps/``.
"""
from multiprocessing import Pool
import logging
from pathlib import Path
import sys

import numpy as np
import pandas as pd

sys.path.append('../src')

from balanced_pod_tools import HopfPlant, balanced_truncation_unstable, load_config, newton_gmres
from balanced_pod_tools.balpod import hsv_table
from balanced_pod_tools.io import write_table
from balanced_pod_tools.spectral import BiorthogonalPair

# processor count to utilize
num_processors = 3

# output-projection orders to compare
orders = [4, 10, 20]

cfg = load_config(Path(__file__).parent.parent / 'config' / 'settings.yml')
dir_out = Path(cfg.output_dir) / 'sweeps'


def hsvs_for_order(args):
    """Balanced POD with ``m`` projected outputs; returns the HSV table."""
    m, base, phi_u, psi_u = args
    plant = HopfPlant(cfg.testbed)
    system = plant.linear_system(base)
    pair = BiorthogonalPair(phi_u, psi_u, system.weight)
    sn = cfg.snapshots
    result = balanced_truncation_unstable(system, cfg.model.r, m, sn.dt, sn.n_steps, sn.spacing, pair_u=pair)
    table = hsv_table(result.balancing, result.model)
    table['m'] = m
    print(f'finished m={m}')
    return table


if __name__ == '__main__':

    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    dir_out.mkdir(parents=True, exist_ok=True)

    # steady state and unstable eigenspaces once, shared by every order
    plant = HopfPlant(cfg.testbed)
    base, _ = newton_gmres(plant.fixed_point_problem(cfg.steady.dt, cfg.steady.T), np.zeros(plant.n))
    seed_run = balanced_truncation_unstable(plant.linear_system(base), cfg.model.r, orders[0], cfg.snapshots.dt,
                                            cfg.snapshots.n_steps, cfg.snapshots.spacing)
    jobs = [(m, base, seed_run.model.phi_u, seed_run.model.psi_u) for m in orders]

    # Create a pool of processors
    p = Pool(processes=num_processors)

    # get them to work in parallel
    tables = p.map(hsvs_for_order, jobs)

    for table in tables:
        write_table(dir_out / f'hsv_m{table["m"].iloc[0]}.csv', table)

    leading = pd.DataFrame({f'm{t["m"].iloc[0]}': t['hsv'].values[:orders[0]] for t in tables})
    leading.insert(0, 'index', np.arange(1, len(leading) + 1))
    write_table(dir_out / 'hsv_leading.csv', leading)
