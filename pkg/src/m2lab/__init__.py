"""Long-context retrieval encoder: FFT long convolutions and Monarch mixers on a numpy autodiff core."""

from .encoder import EncoderConfig, EncoderModel, embed_text, encode, extend_model
from .monarch import MonarchMatrix, monarch_apply, monarch_dense, monarch_init
from .retrieval import (CHUNK_AVERAGE, TRUNCATE, BM25Retriever, DenseRetriever, EmbeddingStrategy,
                        RetrievalTask, evaluate, ndcg_at_k)

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "EncoderModel", "embed_text", "encode", "extend_model",
    "MonarchMatrix", "monarch_apply", "monarch_dense", "monarch_init",
    "CHUNK_AVERAGE", "TRUNCATE", "BM25Retriever", "DenseRetriever", "EmbeddingStrategy",
    "RetrievalTask", "evaluate", "ndcg_at_k",
]
