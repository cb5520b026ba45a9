# Residual reports: one measured identity, its threshold and everything needed to reproduce it.
from dataclasses import dataclass, field
from typing import Any, Dict, Optional


@dataclass(frozen=True)
class ResidualReport:
    name: str
    residual: float
    threshold: Optional[float] = None  # None marks an informational measurement
    context: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.threshold is None:
            return True
        return self.residual <= self.threshold  # NaN residuals fail

    @property
    def status(self) -> str:
        if self.threshold is None:
            return "info"
        return "pass" if self.passed else "fail"

    def line(self) -> str:
        threshold = "-" if self.threshold is None else f"{self.threshold:.3e}"
        return f"{self.name} {self.status} {self.residual:.6e} {threshold}"

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status,
            "residual": self.residual,
            "threshold": self.threshold,
            "context": ";".join(f"{k}={v}" for k, v in sorted(self.context.items())),
        }


def failed(reports) -> list:
    return [r for r in reports if r.status == "fail"]
