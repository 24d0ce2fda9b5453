"""Fisher-weighted low-rank factorization of linear layers.

Thin Python front end over the C++ core. Matrices are NumPy float64 arrays;
layer weights are stored inputs x outputs.
"""

from ._core import (
    Dataset,
    DemoTask,
    Error,
    IoError,
    Model,
    NumericalError,
    ValidationError,
    accumulate_fisher,
    compress,
    evaluate,
    factorize_fwsvd,
    factorize_svd,
    frobenius_error,
    group_partition,
    group_truncation,
    load_dataset,
    load_fisher,
    load_model,
    make_demo_task,
    rank_for_ratio,
    reconstruct,
    row_importance,
    row_weighted_error,
    save_model,
    svd,
    train_demo,
    truncate,
    weighted_frobenius_error,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
