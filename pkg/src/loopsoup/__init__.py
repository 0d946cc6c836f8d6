"""Loop soups of finite killed Markov chains: moments, renormalized fields, Poisson chaos."""

from .errors import (
    BudgetTooSmall,
    ConfigError,
    CutoffTooLarge,
    EnumerationBudget,
    InfiniteMass,
    KernelMismatch,
    LoopSoupError,
    NegativeRate,
    QuadratureFailure,
    SingularGenerator,
    UnsupportedDimension,
)
from .kernel import MarkovKernel, build_kernel, example_kernel, random_kernel, simulate_path
from .loops import (
    BasedLoop,
    LoopMeasure,
    LoopSoup,
    OccupationPolynomial,
    SoupBatch,
    mu_expectation,
    mu_moment,
    sample_loop_soup,
    sample_soup_batch,
)
from .renorm import PointMeasure, build_A, build_B, psi_field, psi_n, psi_tilde_n
from .checks import run_suite

__all__ = [
    "BasedLoop",
    "BudgetTooSmall",
    "ConfigError",
    "CutoffTooLarge",
    "EnumerationBudget",
    "InfiniteMass",
    "KernelMismatch",
    "LoopMeasure",
    "LoopSoup",
    "LoopSoupError",
    "MarkovKernel",
    "NegativeRate",
    "OccupationPolynomial",
    "PointMeasure",
    "QuadratureFailure",
    "SingularGenerator",
    "SoupBatch",
    "UnsupportedDimension",
    "build_A",
    "build_B",
    "build_kernel",
    "example_kernel",
    "mu_expectation",
    "mu_moment",
    "psi_field",
    "psi_n",
    "psi_tilde_n",
    "random_kernel",
    "run_suite",
    "sample_loop_soup",
    "sample_soup_batch",
    "simulate_path",
]
