"""Model schemas: the TSAW rate function and the SRBP interaction potential."""

from math import factorial
from typing import Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import BaseModel, Field, field_validator, model_validator

from ..utils.errors import DimensionError, PotentialError, RateFunctionError


class RateFunction(BaseModel):
    """
    Jump-rate function w(u) = gamma + s(u) + r(u) of the true self-avoiding walk.

    s is even and given by its polynomial coefficients (s0, s2, s4, ...);
    r is odd, either the identity or a series given by its odd derivatives
    at zero (r'(0), r'''(0), ...).
    """

    gamma: float = Field(..., gt=0.0, description="Positive lower bound of the jump rate")
    s_coeffs: List[float] = Field(
        default_factory=list,
        description="Even polynomial coefficients (s0, s2, s4, ...)"
    )
    r_mode: Literal["linear", "entire"] = Field(
        default="linear",
        description="'linear' for r(u) = u, 'entire' for an odd Taylor series"
    )
    r_coeffs: List[float] = Field(
        default_factory=lambda: [1.0],
        description="Odd derivatives at zero (r'(0), r'''(0), ...); ignored in linear mode"
    )
    r_series_truncated: bool = Field(
        default=False,
        description="True when r_coeffs truncate an infinite series (tail is extrapolated)"
    )
    c: float = Field(default=0.9, gt=0.0, description="Convexity constant: r' > c")
    eps: float = Field(default=0.1, gt=0.0, description="Slack in the Gaussian domination condition")
    C_dom: float = Field(default=1e3, gt=0.0, description="Gaussian domination constant")

    class Config:
        frozen = True
        json_schema_extra = {
            "example": {
                "gamma": 1.0,
                "s_coeffs": [0.0, 0.0, 0.25],
                "r_mode": "linear",
                "c": 0.9,
                "eps": 0.1,
                "C_dom": 1000.0,
            }
        }

    @field_validator("s_coeffs", "r_coeffs")
    @classmethod
    def _finite(cls, v: List[float]) -> List[float]:
        if not all(np.isfinite(v)):
            raise ValueError("coefficients must be finite")
        return v

    @model_validator(mode="after")
    def _linear_mode_is_identity(self) -> "RateFunction":
        if self.r_mode == "linear" and list(self.r_coeffs) != [1.0]:
            raise ValueError("linear mode means r(u) = u; use r_mode='entire' for other series")
        return self

    @classmethod
    def from_polynomial(
        cls,
        gamma: float,
        s_poly: Sequence[float],
        r_poly: Sequence[float],
        **kwargs,
    ) -> "RateFunction":
        """
        Build from full power-series coefficients [a0, a1, a2, ...].

        Raises RateFunctionError when s has an odd term or r an even one.
        """
        s_poly = list(s_poly)
        r_poly = list(r_poly)
        odd_in_s = [k for k, a in enumerate(s_poly) if k % 2 == 1 and a != 0.0]
        even_in_r = [k for k, a in enumerate(r_poly) if k % 2 == 0 and a != 0.0]
        if odd_in_s:
            raise RateFunctionError("s must be even", {"odd_powers": odd_in_s})
        if even_in_r:
            raise RateFunctionError("r must be odd", {"even_powers": even_in_r})

        s_coeffs = [float(a) for a in s_poly[0::2]]
        r_derivs = [float(a) * factorial(k) for k, a in enumerate(r_poly) if k % 2 == 1]
        while r_derivs and r_derivs[-1] == 0.0:
            r_derivs.pop()

        if r_derivs == [1.0]:
            return cls(gamma=gamma, s_coeffs=s_coeffs, r_mode="linear", **kwargs)
        return cls(gamma=gamma, s_coeffs=s_coeffs, r_mode="entire", r_coeffs=r_derivs, **kwargs)

    @property
    def is_gaussian(self) -> bool:
        """r(u) = u, the case with a Gaussian stationary environment."""
        return self.r_mode == "linear"

    @property
    def s_polynomial(self) -> Polynomial:
        coef = np.zeros(max(2 * len(self.s_coeffs) - 1, 1))
        for k, a in enumerate(self.s_coeffs):
            coef[2 * k] = a
        return Polynomial(coef)

    @property
    def r_polynomial(self) -> Polynomial:
        derivs = [1.0] if self.r_mode == "linear" else list(self.r_coeffs)
        coef = np.zeros(2 * len(derivs) + 1)
        for k, a in enumerate(derivs):
            n = 2 * k + 1
            coef[n] = a / factorial(n)
        return Polynomial(coef)

    @property
    def w_polynomial(self) -> Polynomial:
        return Polynomial([self.gamma]) + self.s_polynomial + self.r_polynomial

    @property
    def s4(self) -> float:
        return self.s_coeffs[2] if len(self.s_coeffs) > 2 else 0.0


class ClosureRate:
    """
    User-supplied rate function given as a callable.

    Closures can be simulated (by thinning against `rate_cap`) but are never
    condition-checked; every record built from one is flagged unverified.
    """

    def __init__(self, gamma: float, fn: Callable[[np.ndarray], np.ndarray], rate_cap: float):
        if gamma <= 0.0 or rate_cap < gamma:
            raise RateFunctionError("closure needs 0 < gamma <= rate_cap")
        self.gamma = gamma
        self.fn = fn
        self.rate_cap = rate_cap

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=float))


class ConditionReport(BaseModel):
    """Outcome of the rate-function checks, with the grid and margins used."""

    ellipticity: bool = Field(..., description="w > 0 on the whole line")
    convexity: bool = Field(..., description="r' > c on the whole line")
    gaussian_domination: bool = Field(..., description="s(u) < C exp((c - eps) u^2 / 2)")
    r_entire: bool = Field(..., description="The series sum (2/c)^(n/2) |r^(n)(0)| converges")
    entire_sum: Optional[float] = Field(None, description="Value of that series, None when divergent")
    entire_ratio: Optional[float] = Field(None, description="Fitted geometric ratio of truncated series terms")

    inf_w: float = Field(..., description="Exact infimum of w")
    argmin_w: float = Field(..., description="Location of the infimum")
    gamma_is_lower_bound: bool = Field(..., description="Configured gamma <= inf w")
    inf_r_prime: float = Field(..., description="Infimum of r'")
    C_dom_min: Optional[float] = Field(None, description="Smallest domination constant, None if none exists")

    u_max: float = Field(..., description="Grid half-width")
    n_grid: int = Field(..., description="Grid points")
    tail_radius: float = Field(..., description="Radius beyond which leading terms dominate")
    margins: Dict[str, float] = Field(default_factory=dict, description="Slack of each passed condition")

    @property
    def all_passed(self) -> bool:
        return self.ellipticity and self.convexity and self.gaussian_domination and self.r_entire


class Potential(BaseModel):
    """Gaussian interaction potential V(x) = a exp(-|x|^2 / sigma^2) in d dimensions."""

    family: Literal["gaussian"] = Field(default="gaussian", description="Potential family")
    amplitude: float = Field(default=1.0, ge=0.0, description="a >= 0; a = 0 is the free polymer")
    width: float = Field(default=1.0, gt=0.0, description="sigma_V")
    d: int = Field(default=3, description="Dimension (d >= 3)")

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _finite(self) -> "Potential":
        if self.d < 3:
            raise DimensionError("the polymer potential is defined for d >= 3", {"d": self.d})
        if not np.isfinite(self.amplitude) or not np.isfinite(self.width):
            raise PotentialError("potential parameters must be finite")
        return self

    @property
    def cutoff_radius(self) -> float:
        """Radius beyond which a exp(-R^2/sigma^2) < 1e-12."""
        if self.amplitude <= 1e-12:
            return 0.0
        return self.width * float(np.sqrt(np.log(self.amplitude / 1e-12)))
