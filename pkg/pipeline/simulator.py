# Traces solution norms and residuals of one scenario over its time grid, as a long table t,quantity,value.
import logging
from typing import Any, Dict

import numpy as np
import pandas as pd

from algebra.expectations import d_pinch, pinch
from algebra.tracial import batch_two_norms, named_rng, random_element
from solvers.unitary import solve_unitary

logger = logging.getLogger(__name__)


class Simulator:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        scenario = input_data["scenario"]
        build = input_data["build"]
        algebra = build.algebra
        times = scenario.grid()
        rng = named_rng(scenario.seed, "simulate")

        a = random_element(algebra, rng).entries
        x = random_element(algebra, rng).entries
        y = random_element(algebra, rng).entries
        base = build.base.stack
        b = pinch(base, x)  # b in B_0
        starts = np.stack([a, b, y, pinch(base, y)])

        P = build.propagator()
        logger.info("simulating %s on %d grid points (%s backend)", scenario.name, len(times), P.backend)
        alpha, beta, gy, g_e0y = np.moveaxis(P.trajectory(0.0, starts, times), 1, 0)
        ps, dps = build.path.frames(times)

        columns: Dict[str, np.ndarray] = {}
        columns["norm"] = batch_two_norms(alpha)
        columns["isometry_residual"] = np.abs(columns["norm"] - batch_two_norms(a))
        columns["range_residual"] = batch_two_norms(pinch(ps, beta) - beta)
        # G_t E_0 = E_t G_t
        columns["intertwining_residual"] = batch_two_norms(g_e0y - pinch(ps, gy))
        ex = pinch(ps, x)
        dx = d_pinch(ps, dps, x)
        columns["codiagonal_residual"] = batch_two_norms(d_pinch(ps, dps, ex) + pinch(ps, dx) - dx)

        wanted = set(scenario.quantities)
        if wanted & {"unitarity_residual", "unitary_intertwining_residual", "omega_gap"}:
            up = solve_unitary(build.path, np.union1d(times, [0.0]), step=scenario.unitary_step,
                               stepper=scenario.stepper, tol=np.inf)
            us = np.stack([up.unitary_at(t) for t in times])
            us_star = us.conj().swapaxes(-1, -2)
            columns["unitarity_residual"] = batch_two_norms(us_star @ us - np.eye(algebra.dim))
            moved = us[:, None] @ base[None] @ us_star[:, None]
            columns["unitary_intertwining_residual"] = np.max(batch_two_norms(moved - ps), axis=1)
            columns["omega_gap"] = batch_two_norms(us @ a @ us_star - alpha)

        frames = [
            pd.DataFrame({"t": times, "quantity": name, "value": np.asarray(columns[name], dtype=float)})
            for name in scenario.quantities
        ]
        df = pd.concat(frames, ignore_index=True)
        return {"df": df, "rows": len(df), "scenario": scenario}
