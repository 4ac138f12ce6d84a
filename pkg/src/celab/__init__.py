"""celab: a numerical laboratory for transport regularity and mixing on periodic 2-d grids."""

from celab.blocks import (
    BlockDecayFit,
    BuildingBlock,
    BuildingBlockVelocity,
    DivergenceSeries,
    PatchedVelocity,
    ResolutionGuardError,
    ScheduleN,
    block_w1p_norm,
    building_block_field,
    divergence_series_terms,
    evolve_unit_blocks,
    measure_block_decay,
    patched_field,
    patched_solution,
    patched_w1p_norm,
)
from celab.calibration import (
    calibrate,
    load_calibration,
    save_calibration,
)
from celab.experiments import (
    EXPERIMENTS,
    ExperimentError,
    ExperimentReport,
    run_experiment,
)
from celab.flow import (
    FlowDiagnostics,
    FlowMap,
    LusinPairReport,
    LusinWitness,
    check_lusin_bilipschitz,
    flow_diagnostics,
    grid_seeds,
    lusin_witness,
    maximal_function,
    solve_ce,
    trace,
)
from celab.functionals import (
    HQuadrature,
    LogSobolevResult,
    PairCheckError,
    SupportPart,
    check_interpolation,
    check_key_lemma,
    check_mixing_log_bound,
    geometric_mixing_scale,
    inner_sq_increment,
    log_sobolev,
    log_sobolev_fourier,
    log_weighted_functional,
    log_weighted_functional_grid,
    subadditivity_gap,
    sup_log_increment,
)
from celab.grid import (
    GridField,
    Spectrum,
    ball_average,
    bv_seminorm,
    demean,
    from_spectrum,
    load_field,
    lp_norm,
    sample_field,
    save_field,
    shift,
    sobolev_neg_norm,
    to_spectrum,
)
from celab.velocity import (
    RadialVortex,
    SampledSteady,
    SteadyShear,
    VelocityField,
    ZeroVelocity,
    curl_from_stream,
    sampled_divergence,
)

__version__ = "0.1.0"
