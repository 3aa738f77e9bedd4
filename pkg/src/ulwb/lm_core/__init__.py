from .checkpoint import (
    CheckpointError,
    CorruptHeaderError,
    ShapeTableMismatchError,
    VersionMismatchError,
    checkpoint_load,
    checkpoint_save,
    file_sha256,
)
from .generate import PromptTooLongError, greedy_generate, greedy_generate_batch
from .model import (
    LAYER_COMPONENTS,
    ModelConfig,
    SequenceTooLongError,
    TinyLM,
    clone_model,
    layer_component_params,
    params_equal,
    xavier_init,
)
from .ops import (
    Batch,
    EmptyMaskError,
    NonFiniteLossError,
    backward,
    batch_loss,
    collate,
    forward,
    nll,
    sequence_mean_nlls,
    token_nlls,
)
from .optim import AdamWState, TrainConfig, clip_by_global_norm, global_norm, lr_factor, step
from .tokenizer import (
    BOS,
    EOS,
    PAD,
    SEP,
    TOKENIZER_ID,
    VOCAB_SIZE,
    Example,
    decode_text,
    detokenize,
    encode_pair,
    encode_text,
    tokenize,
)
from .training import DivergenceError, EpochLog, divergence_limit, train
