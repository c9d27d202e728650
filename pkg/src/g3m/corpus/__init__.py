from .data import (
    GREETING,
    CorpusError,
    DialogSession,
    ParseError,
    Role,
    Sample,
    Utterance,
    ZScore,
    build_samples,
    kfold,
    kfold_indices,
    load_sessions,
    partition_samples,
    preprocess,
    save_sessions,
    split,
    strip_greetings,
    zscore_apply,
    zscore_fit,
)
from .synthetic import SynthConfig, corpus_stats, generate_synthetic, intent_blocks, intent_names
from .text import (
    CLS_ID,
    DEFAULT_M_MAX,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    PackedInput,
    Vocabulary,
    pack,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
