from .logits_diff import IncompatibleTokenizerError, LogitsDiffLM, logits_diff_decode
from .methods import (
    DEFAULT_RATIOS,
    KINDS,
    MethodSpec,
    PerturbSpec,
    UnknownComponentError,
    apply_layer_perturbation,
    apply_xavier_reinit,
    as_examples,
    freeze_boundary,
    kl_to_reference,
    run_controlled_ga,
    run_gradient_ascent,
    run_gradient_descent,
    run_gradient_difference,
    run_kl_minimization,
)
from .pipeline import (
    PRESETS,
    PipelineData,
    PipelineSpec,
    StageReport,
    preset,
    run_pipeline,
    run_stage,
    train_assistant,
)
