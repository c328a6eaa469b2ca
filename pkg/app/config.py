import os
from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict, Field


class Tolerances(BaseModel):
    """Every threshold the checkers compare against, in one place."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    roundoff: float = Field(1e-12, gt=0, description="Exact discrete identities (relative)")
    balance: float = Field(1e-13, gt=0, description="Exact balance, relative to ||A||*||f||^2")
    discretization: float = Field(1e-2, gt=0, description="Convergent errors such as max|V + 1| on the circle")
    spectral: float = Field(1e-9, gt=0, description="Relative sigma below which a vector counts as kernel")
    order_target: float = Field(2.0, description="Expected observed convergence order")
    order_slack: float = Field(0.3, ge=0, description="Accepted deviation from the expected order")
    phase_range: float = Field(1e-8, gt=0, description="Per-component phase range (radians)")
    phase_energy: float = Field(1e-10, gt=0, description="Phase Dirichlet energy, relative to the energy scale")
    vanishing: float = Field(1e-6, gt=0, description="min|f|/max|f| below which f counts as vanishing")
    phase_jump: float = Field(1e-6, gt=0, description="Margin below pi for a resolvable edge phase jump")
    cutoff_final: float = Field(1e-10, gt=0, description="Final cutoff-series term, relative to its scale")
    oracle_agreement: float = Field(1e-8, gt=0, description="Iterative vs dense sigma agreement (relative)")

    def order_window(self) -> tuple:
        return (self.order_target - self.order_slack, self.order_target + self.order_slack)


@dataclass(frozen=True)
class Settings:
    """Process-level settings read from the environment (.env is loaded by main.py)."""

    output_dir: str = "out"
    log_level: str = "INFO"
    workers: int = 1
    max_oracle_size: int = 2000
    default_seed: int = 0


def load_settings() -> Settings:
    """
    Build Settings from LAB_* environment variables.

    Returns:
        Settings with defaults for anything unset
    """
    return Settings(
        output_dir=os.environ.get("LAB_OUTPUT_DIR", "out"),
        log_level=os.environ.get("LAB_LOG_LEVEL", "INFO").upper(),
        workers=max(1, int(os.environ.get("LAB_WORKERS", "1"))),
        max_oracle_size=int(os.environ.get("LAB_MAX_ORACLE_SIZE", "2000")),
        default_seed=int(os.environ.get("LAB_DEFAULT_SEED", "0")),
    )
