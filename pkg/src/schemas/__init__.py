"""Pydantic schemas for data contracts between modules."""

from .model import RateFunction, ClosureRate, ConditionReport, Potential
from .field import FieldSample, GibbsSpec
from .run import (
    Estimate, Geometry, TsawOptions, EstimatorOptions, FockOptions,
    SpectralOptions, FieldOptions, RunConfig, RunRecord, SCHEMA_VERSION
)

__all__ = [
    "RateFunction",
    "ClosureRate",
    "ConditionReport",
    "Potential",
    "FieldSample",
    "GibbsSpec",
    "Estimate",
    "Geometry",
    "TsawOptions",
    "EstimatorOptions",
    "FockOptions",
    "SpectralOptions",
    "FieldOptions",
    "RunConfig",
    "RunRecord",
    "SCHEMA_VERSION",
]
