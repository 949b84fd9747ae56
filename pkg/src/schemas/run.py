"""Run configuration, run records and estimates: the persisted contracts."""

from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import stats as sps

from .model import Potential, RateFunction


SCHEMA_VERSION = 1


class Estimate(BaseModel):
    """A point estimate with its standard error and effective sample size."""

    value: float = Field(..., description="Point estimate")
    stderr: float = Field(..., ge=0.0, description="Standard error")
    n_eff: float = Field(..., ge=0.0, description="Effective sample size")
    n: int = Field(..., ge=0, description="Raw sample size")
    method: str = Field(..., description="Estimator tag")
    dof: Optional[int] = Field(None, description="Degrees of freedom for t-intervals")

    @model_validator(mode="after")
    def _n_eff_bounded(self) -> "Estimate":
        if self.n_eff > self.n + 1e-9:
            raise ValueError("n_eff cannot exceed n")
        return self

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        """Symmetric confidence interval (t-quantile when dof is known)."""
        if self.dof:
            q = float(sps.t.ppf(0.5 + level / 2, self.dof))
        else:
            q = float(sps.norm.ppf(0.5 + level / 2))
        return self.value - q * self.stderr, self.value + q * self.stderr


class Geometry(BaseModel):
    """Lattice torus or continuum box geometry."""

    d: int = Field(default=3, ge=1, description="Dimension")
    L: int = Field(default=32, ge=2, description="Torus side (lattice)")
    box: float = Field(default=32.0, gt=0.0, description="Box side (continuum)")
    grid: int = Field(default=64, ge=4, description="Grid points per axis (continuum)")


class TsawOptions(BaseModel):
    keep_events: bool = Field(default=True, description="Retain the event log for compensators")
    event_method: Literal["inversion", "thinning"] = Field(default="inversion", description="Waiting-time sampler")
    frozen: bool = Field(default=False, description="Disable local-time growth (diagnostic)")


class EstimatorOptions(BaseModel):
    burn_in_fraction: float = Field(default=0.2, ge=0.0, lt=1.0, description="Leading fraction excluded from fits")
    min_points: int = Field(default=10, ge=2, description="Smallest regression window")
    min_replicas: int = Field(default=30, ge=2, description="Fewest replicas for a diffusivity fit")


class FockOptions(BaseModel):
    variant: Literal["lattice", "continuum"] = Field(default="lattice", description="TSAW or SRBP operators")
    L_f: int = Field(default=4, ge=2, description="Momentum grid side; the lattice compensator needs L_f >= 3")
    n_max: int = Field(default=3, ge=1, description="Degree cap")
    lambda_schedule: List[float] = Field(
        default_factory=lambda: [1.0, 0.3, 0.1, 0.03, 0.01],
        description="Decreasing resolvent parameters"
    )
    direction: int = Field(default=0, ge=0, description="Coordinate l of the compensator")
    stiffness: float = Field(default=2.0, gt=0.0, description="Environment stiffness (2 is stationary)")
    box: Optional[float] = Field(default=None, gt=0.0, description="Box side of the continuum grid (defaults to L_f)")
    scan_degrees: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], description="Degrees of the norm scan")
    truncation_check: bool = Field(default=True, description="Repeat the resolvent at n_max + 1")
    qv_rate: Optional[float] = Field(default=None, gt=0.0, description="Measured jump quadratic-variation rate")
    qv_stderr: float = Field(default=0.0, ge=0.0, description="Standard error of qv_rate")
    reference_run: Optional[str] = Field(
        default=None, description="Stored stationary tsaw run supplying the measured QV rate and diffusivity"
    )


class SpectralOptions(BaseModel):
    ladder: List[int] = Field(default_factory=lambda: [64, 128, 256], description="Quadrature ladder")
    green_points: List[List[int]] = Field(
        default_factory=lambda: [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 2, 0]],
        description="Sites at which the lattice Green function is tabulated"
    )
    z_half_c: float = Field(default=1.0, gt=0.0, description="Z(c/2) fed into the covariance bounds")
    beta: float = Field(default=1.0, gt=0.0, description="Exponent of the Z(lambda) bound")


class FieldOptions(BaseModel):
    kind: Literal["lattice_gaussian", "lattice_gibbs", "continuum_gaussian"] = Field(
        default="lattice_gaussian", description="Sampler"
    )
    sweeps: int = Field(default=100, ge=0, description="Gibbs sweeps after burn-in")
    burn_in: Optional[int] = Field(default=None, ge=0, description="Gibbs burn-in sweeps")
    proposal_scale: float = Field(default=0.5, gt=0.0, description="Metropolis proposal std")
    export_slice: bool = Field(default=False, description="Also export a 2d CSV slice")


class RunConfig(BaseModel):
    """
    Structured run configuration, one per experiment.

    Sections: geometry, model (rate or potential), horizon and replicas,
    estimator windows, plus per-model option blocks.
    """

    schema_version: int = Field(default=SCHEMA_VERSION, description="Config schema version")
    model: Literal["tsaw", "srbp", "spectral", "fock", "field"] = Field(..., description="Experiment kind")
    preset: Optional[str] = Field(None, description="Preset this config was built from")

    geometry: Geometry = Field(default_factory=Geometry)
    rate: Optional[RateFunction] = Field(None, description="TSAW rate function")
    potential: Optional[Potential] = Field(None, description="SRBP potential")

    horizon: float = Field(default=10.0, ge=0.0, description="Simulation horizon T")
    dt: float = Field(default=0.01, gt=0.0, description="Euler-Maruyama step")
    sample_every: float = Field(default=1.0, gt=0.0, description="Spacing of the recorded time grid")
    replicas: int = Field(default=1, ge=1, description="Independent replicas")
    seed: int = Field(default=20240917, ge=0, description="Master seed")
    init: Literal["stationary", "empty"] = Field(default="stationary", description="Initial environment")
    stiffness: float = Field(default=2.0, gt=0.0, description="Stiffness of the stationary initial field")

    tsaw: TsawOptions = Field(default_factory=TsawOptions)
    estimator: EstimatorOptions = Field(default_factory=EstimatorOptions)
    fock: FockOptions = Field(default_factory=FockOptions)
    spectral: SpectralOptions = Field(default_factory=SpectralOptions)
    field: FieldOptions = Field(default_factory=FieldOptions)

    output_dir: Optional[str] = Field(None, description="Override of the output directory")

    @model_validator(mode="after")
    def _model_inputs(self) -> "RunConfig":
        if self.model == "tsaw" and self.rate is None:
            raise ValueError("tsaw runs need a rate function")
        if self.model == "srbp":
            if self.potential is None:
                raise ValueError("srbp runs need a potential")
            if self.potential.d != self.geometry.d:
                raise ValueError("potential dimension differs from geometry")
            if self.dt > 1e-2 * self.potential.width + 1e-15:
                raise ValueError("dt must resolve the interaction scale (dt <= 0.01 sigma_V)")
        if self.model == "fock" and self.fock.variant == "lattice" and self.rate is None:
            raise ValueError("lattice fock runs need a rate function")
        if self.model == "fock" and self.fock.variant == "continuum" and self.potential is None:
            raise ValueError("continuum fock runs need a potential")
        return self

    def time_grid(self) -> np.ndarray:
        """Recorded times 0, sample_every, ..., T (T always included)."""
        n = int(np.floor(self.horizon / self.sample_every + 1e-9))
        grid = self.sample_every * np.arange(n + 1)
        if grid[-1] < self.horizon - 1e-12:
            grid = np.append(grid, self.horizon)
        return grid


class RunRecord(BaseModel):
    """
    One replica's output: everything needed to replay it bit-identically.
    """

    schema_version: int = Field(default=SCHEMA_VERSION)
    model: str = Field(..., description="tsaw or srbp")
    replica: int = Field(..., ge=0, description="Replica index")
    master_seed: int = Field(..., description="Master seed")
    spawn_key: List[int] = Field(..., description="SeedSequence spawn key of this replica")
    config: Dict[str, Any] = Field(..., description="Config snapshot")

    times: List[float] = Field(default_factory=list, description="Recorded time grid")
    positions: List[List[float]] = Field(default_factory=list, description="X(t) on the grid (unwrapped)")
    series: Dict[str, List[List[float]]] = Field(
        default_factory=dict, description="Further grid series (B, compensator, ...)"
    )

    horizon: float = Field(..., ge=0.0)
    n_events: int = Field(default=0, ge=0, description="Jumps (tsaw) or steps (srbp)")
    stationary: bool = Field(..., description="False for empty-profile starts")
    verified: bool = Field(default=True, description="False when the rate function was not checked")
    wrap: bool = Field(default=False, description="Excursion reached L/4; statistics suspect")

    gradient_start: List[float] = Field(default_factory=list, description="eta(0,0) - eta(0,e_l), l = 1..d")
    gradient_end: List[float] = Field(default_factory=list, description="eta(T,0) - eta(T,e_l), l = 1..d")
    jump_counts: List[int] = Field(default_factory=list, description="Jumps per direction +e_1, -e_1, ...")
    compensator: Optional[Dict[str, List[float]]] = Field(
        None, description="N, M, bar and tilde integrals at T per coordinate"
    )
    extras: Dict[str, Any] = Field(default_factory=dict)
    estimates: Dict[str, Estimate] = Field(default_factory=dict)

    @property
    def displacement(self) -> np.ndarray:
        if not self.positions:
            return np.zeros(0)
        return np.asarray(self.positions[-1]) - np.asarray(self.positions[0])
