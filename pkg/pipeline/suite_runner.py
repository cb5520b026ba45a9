# Runs the verification suite for a scenario and decides the verdict.
import logging
from typing import Any, Dict

from verification.reports import failed
from verification.suite import CHECK_NAMES, run_full_suite

logger = logging.getLogger(__name__)


class SuiteRunner:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        if input_data.get("list_only"):
            return {"names": list(CHECK_NAMES), "reports": [], "passed": True}

        scenario = input_data["scenario"]
        reports = run_full_suite(scenario, input_data.get("build"))
        failures = failed(reports)
        for report in failures:
            logger.warning("check failed: %s (context %s)", report.line(), report.context)
        return {"reports": reports, "passed": not failures}
