"""Rate-adaptive geometric constellation shaping over effective-AWGN links.

The pipeline: learn constellation point positions with gradient descent
on a GMI surrogate, detect point clusters that emerge at low SNR, turn
the information-free bit levels into dummy bits for net-rate adaptation,
and sweep net rate against distance on a span-based fiber link model.
"""

from .channel import (
    EffectiveChannel,
    LinkConfig,
    awgn_sample,
    db_to_linear,
    effective_snr,
    linear_to_db,
    nlin_factor,
    optimal_launch_power,
)
from .constellation import (
    Constellation,
    MomCluster,
    Moments,
    bit_table,
    constellation_from_dict,
    constellation_to_dict,
    detect_mom_clusters,
    load_constellation,
    min_distance,
    moments,
    normalize,
    save_constellation,
    uniform_qam,
)
from .demapper import (
    GmiReport,
    gmi_oracle_quadrature,
    llr_exact,
    llr_maxlog,
    per_bit_gmi_from_samples,
    per_bit_gmi_mc,
)
from .errors import (
    CapabilityError,
    DegenerateInputError,
    FramingError,
    NumericalError,
    ParameterError,
    ShapegainError,
    UnboundedOptimumError,
)
from .lut import LutDocument, export_lut, parse_lut, render_lut
from .rate_adapt import (
    RateAdaptPlan,
    assemble_labels,
    best_plan,
    extract_data_bits,
    load_plan,
    net_rate,
    save_plan,
    select_dummy_bits,
)
from .sweep import (
    EvalSettings,
    OutputSettings,
    RunConfig,
    SweepRow,
    SweepSettings,
    derive_seed,
    evaluate_grid_point,
    load_run_config,
    max_reach,
    rows_to_csv,
    run_sweep,
)
from .training import (
    AdamHyper,
    AdamState,
    GaussianDemapper,
    GradCheckReport,
    LinkTarget,
    MapperParams,
    MlpDemapper,
    SnrTarget,
    TrainConfig,
    TrainHistory,
    adam_init,
    adam_step,
    backward,
    forward_loss,
    gradient_check,
    init_mapper,
    init_mlp,
    train,
    train_config_from_dict,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
