"""
Multilingual data plumbing.

- LanguageRegistry: language metadata with bundled `ted` and `opus` tables
- GroupingScheme: family / agnostic / pair / random / custom partitions
- BudgetReport: trainable-parameter accounting per regime
- Vocab: whitespace or character vocabulary with language tags
- BitextCorpus / BatchSampler: bitext loading and temperature-weighted mixed batches
"""

from .registry import (
    GroupingCoverageError,
    GroupingScheme,
    LanguageInfo,
    LanguageRegistry,
    RegistryParseError,
    build_grouping,
    check_partition,
    load_registry,
    parse_registry,
)
from .budget import BudgetReport, adapter_set_param_count, backbone_param_count, budget_report
from .vocab import Vocab, build_vocab, detokenize, lang_tag, tokenize
from .data import (
    AlignmentError,
    Batch,
    BatchSampler,
    BitextCorpus,
    CorpusError,
    SamplingDomainError,
    SamplingSchedule,
    bitext_paths,
    iterate_examples,
    load_bitext,
    load_split,
    sample_batches,
    split_corpus,
    temperature_weights,
)
from .synthetic import generate_toy_corpus, write_toy_corpus

__all__ = [
    'LanguageInfo',
    'LanguageRegistry',
    'GroupingScheme',
    'BudgetReport',
    'Vocab',
    'BitextCorpus',
    'Batch',
    'BatchSampler',
    'SamplingSchedule',
    'load_registry',
    'parse_registry',
    'build_grouping',
    'check_partition',
    'budget_report',
    'backbone_param_count',
    'adapter_set_param_count',
    'build_vocab',
    'tokenize',
    'detokenize',
    'lang_tag',
    'load_bitext',
    'load_split',
    'bitext_paths',
    'iterate_examples',
    'temperature_weights',
    'sample_batches',
    'split_corpus',
    'generate_toy_corpus',
    'write_toy_corpus',
    'RegistryParseError',
    'GroupingCoverageError',
    'AlignmentError',
    'CorpusError',
    'SamplingDomainError',
]
