from .metrics import (
    exact_match,
    harmonic_mean,
    invert,
    lcs_length,
    mia_score,
    normalize_answer,
    pairwise_auc,
    rouge_l,
    rouge_l_text,
    task_aggregate,
)
from .scoring import (
    SCORE_KEYS,
    GenerationRecord,
    MiaResult,
    MissingGroupError,
    ScoreReport,
    combine,
    document_nlls,
    final_aggregate,
    format_table,
    full_report,
    knowledge_score,
    knowledge_scores,
    mia_evaluate,
    option_nlls,
    regurgitation_score,
    regurgitation_scores,
    utility_accuracy,
)
