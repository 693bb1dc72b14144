"""Wide two-layer networks at initialization and under gradient flow."""

__version__ = "0.1.0"

from .activations import ACTIVATIONS, Activation, get_activation  # noqa: E402
from .distributions import ParamDistribution, make_rng  # noqa: E402
from .edgeworth import (EdgeworthDensity1D, EdgeworthDensityK, edgeworth_density_1d,  # noqa: E402
                        edgeworth_density_k)
from .measures import EmpiricalMeasure, FlowMap, flow_map, prokhorov_distance  # noqa: E402
from .moments import (CumulantTable, MomentTable, cumulants_to_moments,  # noqa: E402
                      estimate_moments_mc, estimate_moments_quadrature, moments_to_cumulants)
from .network import ParamVector, TrainingSet, network_eval, sample_params  # noqa: E402
from .ntk import ntk_finite, ntk_infinite_kernel, third_order_kernel  # noqa: E402
from .training import integrate_gradient_flow, linear_flow  # noqa: E402

__all__ = [
    "ACTIVATIONS", "Activation", "get_activation", "ParamDistribution", "make_rng",
    "EdgeworthDensity1D", "EdgeworthDensityK", "edgeworth_density_1d", "edgeworth_density_k",
    "EmpiricalMeasure", "FlowMap", "flow_map", "prokhorov_distance",
    "CumulantTable", "MomentTable", "cumulants_to_moments", "estimate_moments_mc",
    "estimate_moments_quadrature", "moments_to_cumulants",
    "ParamVector", "TrainingSet", "network_eval", "sample_params",
    "ntk_finite", "ntk_infinite_kernel", "third_order_kernel",
    "integrate_gradient_flow", "linear_flow",
]
