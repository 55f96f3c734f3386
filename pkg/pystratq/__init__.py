from pystratq.core_types import (
    CostFunction,
    EconomicParams,
    QueueConfigurationError,
    QueueDomainError,
    StrategicQueueError,
    SystemConfig,
    TaggedProfile,
    custom_cost,
    poa_cost,
    polynomial_cost,
    validate_cost,
)
from pystratq.ctmc_exact import (
    IdleOrderPolicy,
    RateRouting,
    StateSpaceError,
    collapse_check,
    generator_solve,
    product_form,
)
from pystratq.equilibrium import EquilibriumReport, find_foc_roots, solve, verify_equilibrium
from pystratq.idle_time import idle_derivatives, idle_probability
from pystratq.routing_mm2 import Mm2Profile, RoutingPreconditionError, equilibrium_for_r, idle_r
from pystratq.simulator import SimConfig, SimEstimate
from pystratq.special_functions import erlang_c, mean_wait, y_star
from pystratq.staffing import a_star, n_opt_search, staff_ao

__version__ = "0.1.1"

__all__ = [
    "CostFunction",
    "EconomicParams",
    "EquilibriumReport",
    "IdleOrderPolicy",
    "Mm2Profile",
    "QueueConfigurationError",
    "QueueDomainError",
    "RateRouting",
    "RoutingPreconditionError",
    "SimConfig",
    "SimEstimate",
    "StateSpaceError",
    "StrategicQueueError",
    "SystemConfig",
    "TaggedProfile",
    "a_star",
    "collapse_check",
    "custom_cost",
    "equilibrium_for_r",
    "erlang_c",
    "find_foc_roots",
    "generator_solve",
    "idle_derivatives",
    "idle_probability",
    "idle_r",
    "mean_wait",
    "n_opt_search",
    "poa_cost",
    "polynomial_cost",
    "product_form",
    "solve",
    "staff_ao",
    "validate_cost",
    "verify_equilibrium",
    "y_star",
]
