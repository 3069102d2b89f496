"""Long-sequence encoder mechanisms, span-corruption objectives and corpus assembly."""

from .attention import (
    AttentionConfig,
    AttentionMask,
    FlopCounter,
    block_attention,
    build_block_mask,
    count_score_flops,
    full_attention,
    global_block_attention,
    overlap_block_attention,
    pooling_attention_layer,
)
from .corpus import Document, SequenceBatch, assemble_linked, assemble_random, embed_document, kmeans, length_stats
from .numerics import Tensor, finite_difference_check
from .objectives import (
    CorruptionExample,
    Vocab,
    decorrupt,
    model_based_corrupt,
    pegasus_corrupt,
    qa_format,
    t5_corrupt,
    t5_mixed_corrupt,
    unigram_oracle,
)
from .rouge import RougeScore, rouge_l, rouge_n

__version__ = "0.1.0"
