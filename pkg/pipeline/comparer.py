# Compares the inner automorphism Omega_t = Ad(u_t) with the transport propagator G_t.
import logging
from typing import Any, Dict

import numpy as np

from algebra.tracial import named_rng
from solvers.unitary import compare_with_transport, solve_unitary
from verification.reports import ResidualReport

logger = logging.getLogger(__name__)


class PropagatorComparer:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        scenario = input_data["scenario"]
        build = input_data["build"]
        P = build.propagator()
        times = [float(t) for t in scenario.check_times]
        up = solve_unitary(build.path, np.union1d(times, [0.0]), step=scenario.unitary_step,
                           stepper=scenario.stepper, tol=scenario.unitary)
        rng = named_rng(scenario.seed, "compare")

        reports = []
        for t in times:
            comparison = compare_with_transport(up, P, t, scenario.samples, seed=rng)
            context = {"t": t, "samples": comparison.samples, "projections": comparison.projections}
            reports.append(ResidualReport(f"omega_vs_g_on_b0@{t:g}", comparison.b0_discrepancy, scenario.integrated, context))
            global_context = dict(context, expected_agreement=comparison.expected_global_agreement)
            reports.append(ResidualReport(f"omega_vs_g_global@{t:g}", comparison.global_discrepancy, None, global_context))

        b0_passed = all(r.passed for r in reports if r.name.startswith("omega_vs_g_on_b0"))
        return {"reports": reports, "passed": b0_passed}
