"""Numerical toolkit for undominated regulation of a monopolist with private costs."""

__version__ = "0.1.0"

from .errors import (
    AssumptionError,
    ContractError,
    DomainError,
    InternalCheckError,
    RegmechError,
)
from .market import (
    Demand,
    LinearDemand,
    LogitDemand,
    MarketEnv,
    TabulatedDemand,
    TypeGrid,
    concave_closure_value,
    efficient_quantity,
    inverse_price,
    price,
    quantity_floor,
    rotate,
    total_surplus,
    validate_assumptions,
    value,
)
from .mechanism import (
    Mechanism,
    Partition,
    SurplusProfile,
    check_dd,
    check_ic,
    check_ir,
    check_left_continuity,
    check_strict_dd,
    consumer_surplus,
    envelope_rent,
    partition_floor_randomized,
    regulator_surplus,
    rs_profile,
    subsidy,
)
from .transforms import (
    PerturbationParams,
    dd_repair,
    deterministic_extract,
    efficient_perturbation,
    extreme_split,
    floor_transform,
    floor_transform_mixture,
    lc_repair,
    meet,
)
from .dominance import (
    Classification,
    DominanceVerdict,
    Relation,
    Status,
    alpha_nesting_check,
    classify,
    compare,
)
from .optimize import (
    OptimalResult,
    Prior,
    bm_optimal,
    dp_oracle,
    expected_rs,
    find_rationalizing_prior,
    fosd,
    make_quantity_levels,
    maxmin,
    monotone_rs_check,
    virtual_cost,
)
from .fixedcost import (
    FcStatus,
    FixedCostEnv,
    FixedCostMechanism,
    fc_check_ic_ir,
    fc_classify,
    fc_compare,
    fc_efficient_quantity,
    fc_envelope_rent,
    fc_rs_profile,
)
