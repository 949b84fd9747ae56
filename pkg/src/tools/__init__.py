"""Numerical tools: rate functions, samplers, simulators, spectral constants and the Fock calculus."""

from .model_core import check_conditions, evaluate_rate, rate_lower_bound
from .field_sampler import gibbs_chain, sample_continuum_field, sample_gff_lattice
from .walk_sim import compensator_decomposition, jump_quadratic_variation, simulate_walk
from .polymer_sim import orthogonality_check, run_polymer
from .spectral import lattice_green, rho_squared, spectral_table
from .fock import GeneratorAssembly, MomentumGrid, assemble_generator, kv_total_variance, norm_growth_scan
from .stats import batch_means_ci, exponent_fit, ks_two_sample, msd_diffusivity
from .report import build_report, write_report

__all__ = [
    "check_conditions",
    "evaluate_rate",
    "rate_lower_bound",
    "gibbs_chain",
    "sample_continuum_field",
    "sample_gff_lattice",
    "compensator_decomposition",
    "jump_quadratic_variation",
    "simulate_walk",
    "orthogonality_check",
    "run_polymer",
    "lattice_green",
    "rho_squared",
    "spectral_table",
    "GeneratorAssembly",
    "MomentumGrid",
    "assemble_generator",
    "kv_total_variance",
    "norm_growth_scan",
    "batch_means_ci",
    "exponent_fit",
    "ks_two_sample",
    "msd_diffusivity",
    "build_report",
    "write_report",
]
