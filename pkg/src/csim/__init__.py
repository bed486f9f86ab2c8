"""Numerical analysis of strongly competitive systems x_i' = x_i f_i(x).

Carrying simplex reconstruction, Lyapunov exponents of rest points and
orbit tails, and sample-based smoothness certificates.
"""
__version__ = "0.1.0"

from .sysmodel import (  # noqa: E402
    CompetitiveSystem,
    FunctionalSystem,
    LotkaVolterraSystem,
    MayLeonardSystem,
    check_hypothesis_A,
    restrict_to_face,
    weak_coupling_lv,
)
from .flow import IntegratorConfig, flow, trajectory, variational_flow  # noqa: E402
from .simplex import RadialGraph, reconstruct_sigma  # noqa: E402
from .spectrum import find_rest_points, permanence_probe  # noqa: E402
from .certify import certify, may_leonard_degree  # noqa: E402

__all__ = [
    "CompetitiveSystem", "FunctionalSystem", "LotkaVolterraSystem", "MayLeonardSystem",
    "check_hypothesis_A", "restrict_to_face", "weak_coupling_lv",
    "IntegratorConfig", "flow", "trajectory", "variational_flow",
    "RadialGraph", "reconstruct_sigma", "find_rest_points", "permanence_probe",
    "certify", "may_leonard_degree",
]
