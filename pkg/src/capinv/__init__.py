"""Capacitor field solver, generative models, and inverse field prediction."""

from .fields import (
    TEST_D,
    TRAIN_D,
    BoundaryMask,
    CapacitorConfig,
    ConvergenceError,
    Dataset,
    FieldGrid,
    GeometryError,
    build_boundary_mask,
    downsample,
    generate_dataset,
    load_dataset,
    optimal_omega,
    save_dataset,
    solve_sor,
)
from .network import (
    DEFAULT_LEARNING_RATES,
    Adam,
    Mlp,
    Momentum,
    TrainingError,
    TrainSchedule,
    backward,
    forward,
    half_sse_loss,
    load_mlp,
    make_optimizer,
    save_mlp,
    train,
)
from .generative import (
    KINDS,
    GenerativeModel,
    GenerativeTrainConfig,
    TrainHistory,
    build_model,
    decode,
    encode,
    kld_loss,
    load_model,
    rec_loss,
    sample_latent,
    save_model,
    train_generative,
)
from .inverse import (
    SPACES,
    InverseOptions,
    InversePipeline,
    InverseProblem,
    InversionError,
    RegressionError,
    RegressionModel,
    add_awgn,
    fit_pipeline,
    fit_regression,
    inverse_predict,
    load_pipeline,
    predict_d,
    recover_field,
    save_pipeline,
)
from .experiments import (
    EXPORT_NAMES,
    TIMING_STAGES,
    AggregateRow,
    StageTiming,
    SweepCell,
    SweepConfig,
    SweepResult,
    TimingTable,
    aggregate_cells,
    export_results,
    read_field_blocks,
    read_ssd_table,
    read_sweep_cells,
    read_timing_table,
    run_noise_sweep,
    run_timing,
    ssd,
)

__version__ = "0.1.0"
