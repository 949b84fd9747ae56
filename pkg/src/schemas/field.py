"""Environment field schemas: field samples and the gradient Gibbs specification."""

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from .model import RateFunction


FieldKind = Literal["lattice_gaussian", "lattice_gibbs", "continuum_gaussian"]


class FieldSample(BaseModel):
    """
    A realization of the environment on a periodic grid.

    Lattice samples are indexed by torus sites and pinned so that the origin
    holds 0. Continuum samples live on an M^d grid over a box of side `box`
    and carry spectral gradient grids.
    """

    d: int = Field(..., ge=1, description="Dimension")
    L: int = Field(..., ge=2, description="Points per axis (torus side for lattice fields)")
    values: np.ndarray = Field(..., description="Field values, shape (L,)*d")
    seed: int = Field(..., ge=0, description="64-bit seed the sample was drawn from")
    kind: FieldKind = Field(..., description="Sampler family")
    stiffness: float = Field(default=1.0, gt=0.0, description="Inverse temperature of the Gibbs weight")
    box: Optional[float] = Field(default=None, description="Box side for continuum samples")
    grads: Optional[List[np.ndarray]] = Field(default=None, description="Gradient grids d_l eta_0")

    class Config:
        arbitrary_types_allowed = True

    @property
    def origin(self) -> tuple:
        return (0,) * self.d

    @property
    def spacing(self) -> float:
        return 1.0 if self.box is None else self.box / self.L

    def pinned(self) -> "FieldSample":
        """Copy with value(origin) = 0; pinning twice equals pinning once."""
        return self.model_copy(update={"values": self.values - self.values[self.origin]})

    def differences(self, axis: int = 0) -> np.ndarray:
        """All nearest-neighbour differences omega(x) - omega(x + e_axis)."""
        return (self.values - np.roll(self.values, -1, axis=axis)).ravel()

    def window_differences(self, size: int = 5) -> np.ndarray:
        """omega(x) - omega(0) for x in the size^d window at the origin (origin excluded)."""
        window = self.values[(slice(0, size),) * self.d]
        flat = (window - self.values[self.origin]).ravel()
        return flat[1:]


class GibbsSpec(BaseModel):
    """Single-site sweep specification for the gradient Gibbs measure with R = int r."""

    rate: RateFunction = Field(..., description="Checked rate function whose r defines R")
    stiffness: float = Field(default=1.0, gt=0.0, description="Weight exp(-stiffness * sum R)")
    proposal_scale: float = Field(default=0.5, gt=0.0, description="Metropolis proposal std")
    n_sweeps: int = Field(default=100, ge=0, description="Sweeps after burn-in")
    burn_in: Optional[int] = Field(default=None, ge=0, description="Burn-in sweeps, default 10 L^2")

    class Config:
        frozen = True

    @property
    def heat_bath(self) -> bool:
        """Gaussian R(u) = u^2/2 admits exact conditional sampling."""
        return self.rate.is_gaussian

    def burn_in_for(self, L: int) -> int:
        return self.burn_in if self.burn_in is not None else 10 * L * L
