from .compose import ComposedStepper, composed_step, substeps
from .exact import (
    SpectrumCheck,
    explicit_contractive_step,
    explicit_stepper,
    lorenz_exact_split_step,
    lorenz_exact_stepper,
    search_traceless_M,
    validate_real_spectrum,
)
from .pieces import (
    DetracedField,
    Piece,
    PlanCheck,
    QuadratureConfig,
    SplittingPlan,
    contractive_plan,
    detrace,
    feng_wang_pieces,
    format_manifest,
    full_pieces,
    parse_manifest,
    plan_from_pieces,
    s_pieces,
)
from .weights import WeightMatrix, weight_scheme

__all__ = [
    "ComposedStepper",
    "DetracedField",
    "Piece",
    "PlanCheck",
    "QuadratureConfig",
    "SpectrumCheck",
    "SplittingPlan",
    "WeightMatrix",
    "composed_step",
    "contractive_plan",
    "detrace",
    "explicit_contractive_step",
    "explicit_stepper",
    "feng_wang_pieces",
    "format_manifest",
    "full_pieces",
    "lorenz_exact_split_step",
    "lorenz_exact_stepper",
    "parse_manifest",
    "plan_from_pieces",
    "s_pieces",
    "search_traceless_M",
    "substeps",
    "validate_real_spectrum",
    "weight_scheme",
]
