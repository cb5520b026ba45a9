# Estimates the constants of a scenario's path: the Hypothesis constant C_J with its certificate,
# the square-summable constant and the generator bound K_J.
import logging
from typing import Any, Dict

import numpy as np

from algebra.expectations import estimate_hypothesis_constant, finite_system_bound, sampled_d_inf_norm
from algebra.projections import generator_sup_norm, square_summable_constant
from algebra.tracial import named_rng

logger = logging.getLogger(__name__)


class ConstantEstimator:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        scenario = input_data["scenario"]
        build = input_data["build"]
        ep, path = build.expectation_path, build.path
        J = scenario.interval
        grid = scenario.constant_grid

        estimate = estimate_hypothesis_constant(ep, J, grid=grid, seed=named_rng(scenario.seed, "constants"), check=False)
        square = square_summable_constant(path, J, grid)
        k_j = generator_sup_norm(path, J, grid)
        finite = max(finite_system_bound(ep, float(t)) for t in np.linspace(J[0], J[1], grid))
        d_inf, h_inf = sampled_d_inf_norm(ep, J, seed=named_rng(scenario.seed, "constants/inf"))
        relative = estimate.quadrature_error / estimate.empirical if estimate.empirical > 0 else 0.0

        constants = {
            "C_J_empirical": estimate.empirical,
            "C_J_bound": estimate.bound,
            "D_J": estimate.d_sup,
            "quadrature_error": estimate.quadrature_error,
            "quadrature_relative_delta": relative,
            "grid": grid,
            "refined_grid": 2 * grid - 1,
            "square_summable_constant": square.value,
            "K_J": k_j,
            "four_K_J_squared": 4.0 * k_j ** 2,
            "finite_system_bound": finite,
            "dE_inf_norm_sampled": d_inf,
            "H_inf_norm_sampled": h_inf,
        }
        certified = estimate.holds
        if not certified:
            logger.error("certificate violated: empirical C_J %.6g exceeds 4|J|D_J^2 = %.6g", estimate.empirical, estimate.bound)
        return {"constants": constants, "certified": certified, "estimate": estimate}

    @staticmethod
    def lines(constants: Dict[str, Any]):
        for name, value in constants.items():
            yield f"{name} {value}" if isinstance(value, int) else f"{name} {value:.17g}"
