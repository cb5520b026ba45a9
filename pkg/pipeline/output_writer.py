# Writes result tables as CSV: 17 significant digits, '.' decimals, '\n' line endings.
import logging
import os
from typing import Any, Dict

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class OutputWriter:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        path = input_data["output"]
        df = input_data.get("df")
        if df is None:
            df = pd.DataFrame([r.as_dict() for r in input_data.get("reports", [])],
                              columns=["name", "status", "residual", "threshold", "context"])

        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
        logger.info("wrote %d rows to %s", len(df), path)
        return {"output": path, "rows": len(df)}
