"""
Translation quality evaluation and comparison reports.

- BleuStats / bleu_corpus: additive corpus BLEU-4 with exponential smoothing
- translate_lines / evaluate_corpus: thread-parallel decoding and scoring
- DeltaVisualizer: SVG bar charts of BLEU differences
- report_emit: score, delta, budget and sweep tables
"""

from .bleu import BleuInputError, BleuStats, bleu_corpus, corpus_stats, to_tokens
from .translate import PairEvaluation, decode_ids, evaluate_corpus, evaluate_pairs, translate_lines
from .visualizer import DeltaVisualizer
from .report import ReportCoverageError, ReportFiles, ReportGenerator, report_emit

__all__ = [
    'BleuStats',
    'PairEvaluation',
    'DeltaVisualizer',
    'ReportGenerator',
    'ReportFiles',
    'bleu_corpus',
    'corpus_stats',
    'to_tokens',
    'decode_ids',
    'translate_lines',
    'evaluate_corpus',
    'evaluate_pairs',
    'report_emit',
    'BleuInputError',
    'ReportCoverageError',
]
