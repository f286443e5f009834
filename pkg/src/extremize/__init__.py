"""Linear extremization of weighted-average forecasts."""

from .aggregators import (
    ExtremizedAggregator,
    WeightVector,
    apply_extremized,
    apply_weights,
    equal_average,
    fit_extremized,
    fit_weighted_average,
    is_extremization_of,
    median_aggregate,
    recover_parameters,
)
from .evaluation import (
    DecompositionResult,
    ReliabilityDiagram,
    decompose,
    quadratic_loss,
    reliability_diagram,
    sample_variance,
)
from .pif import (
    ForecastPanel,
    InformationStructure,
    build_structure,
    revealed_aggregate,
    revealed_coefficients,
    revealed_variance,
    sample_panel,
    scenario_structure,
)

__version__ = "0.1.0"
