"""Weighted sum-rate optimization for MIMO broadcast channels under a sum
power budget and interference constraints, via dual-uplink solves, an
uplink-to-downlink covariance mapping, and an outer subgradient loop over
the constraint multipliers."""

__version__ = "0.1.0"

from .bc import (
    BcMapping,
    DegenerateStream,
    Stream,
    assemble_bc,
    bc_constraint_value,
    bc_power_recursion,
    bc_stream_sinrs,
    decompose_streams,
    map_mac_to_bc,
    mmse_beamformers,
    per_user_rates_bc,
    weighted_sum_rate_bc,
)
from .linalg import (
    EigenDecomposition,
    InvalidInput,
    NotPositiveDefinite,
    eig_hermitian,
    hermitian_part,
    logdet_pd,
    psd_project,
    solve_pd,
)
from .mac import (
    AllZeroAuxiliaries,
    DipaOptions,
    DipaResult,
    InnerResult,
    NoiseShape,
    dipa,
    inner_ascent,
    mac_gradient,
    mac_power,
    noise_shape,
    per_user_rates_mac,
    subgradient_of_dual,
    waterfill_single_user,
    weighted_sum_rate_mac,
)
from .scenario import (
    DimensionMismatch,
    Scenario,
    SchemaError,
    UserOrdering,
    db_to_linear,
    generate_scenario,
    linear_to_db,
    load_scenario,
    order_users,
    save_scenario,
)
from .sipa import (
    AuxiliaryPoint,
    ConstraintMode,
    RegionPoint,
    SolveReport,
    region_sweep,
    sipa,
    sipa_subgradient,
)

__all__ = [name for name in dir() if not name.startswith("_")]
