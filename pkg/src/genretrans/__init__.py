"""Translate genre annotations between tag systems.

Three scorers are provided: a knowledge-based one that maps both tag
systems onto a pivot genre ontology, a logistic-regression one trained on a
parallel corpus, and a MAP hybrid that uses the knowledge-based table as
the prior mean of the regression weights.
"""

from .corpus import (
    AnnotatedItem,
    CorpusFormatError,
    ParallelCorpus,
    decode,
    encode,
    load_corpus,
    mean_source_tags,
    stratified_group_kfold,
    subsample,
)
from .evaluation import (
    EvalReport,
    MacroAUC,
    default_factors,
    levenshtein_baseline,
    macro_auc,
    roc_auc,
    run_experiment,
)
from .graph import GenreGraph, TagSystem
from .kb import (
    MappingMatrix,
    PivotMapper,
    PivotOntology,
    TranslationTable,
    build_mapping_matrix,
    build_translation_table,
    kb_score,
)
from .logreg import (
    LogisticModel,
    NumericalError,
    PriorSpec,
    TrainConfig,
    decision_function,
    elicit_lambda,
    grad,
    map_loss,
    ml_loss,
    predict_proba,
    stat_score,
    train,
)
from .normalizer import (
    DegenerateTagError,
    NormalizedForm,
    Normalizer,
    SplitThresholds,
    Trie,
    WordFrequencyTable,
    normalize_tag,
)
from .pipeline import KBBuild, build_kb

__version__ = "0.1.0"

__all__ = [
    "AnnotatedItem",
    "CorpusFormatError",
    "DegenerateTagError",
    "EvalReport",
    "GenreGraph",
    "KBBuild",
    "LogisticModel",
    "MacroAUC",
    "MappingMatrix",
    "NormalizedForm",
    "Normalizer",
    "NumericalError",
    "ParallelCorpus",
    "PivotMapper",
    "PivotOntology",
    "PriorSpec",
    "SplitThresholds",
    "TagSystem",
    "TrainConfig",
    "TranslationTable",
    "Trie",
    "WordFrequencyTable",
    "build_kb",
    "build_mapping_matrix",
    "build_translation_table",
    "decision_function",
    "decode",
    "default_factors",
    "elicit_lambda",
    "encode",
    "grad",
    "kb_score",
    "levenshtein_baseline",
    "load_corpus",
    "macro_auc",
    "map_loss",
    "mean_source_tags",
    "ml_loss",
    "normalize_tag",
    "predict_proba",
    "roc_auc",
    "run_experiment",
    "stat_score",
    "stratified_group_kfold",
    "subsample",
    "train",
]
