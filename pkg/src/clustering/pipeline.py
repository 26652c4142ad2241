"""
Automatic language grouping: sentence vectors -> PCA -> GMM -> majority vote.

Sentence vectors come from the model's own encoder (mean-pooled final
states) or from an external file:

    <n> <dim>
    #lang bg
    0.12 -0.40 ...
    ...
    #lang fa
    ...
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from multilingual import BitextCorpus, GroupingScheme, LanguageRegistry, check_partition
from multilingual.vocab import BOS_ID
from seq2seq import Seq2SeqModel

from .errors import ClusterCoverageError, ClusteringDomainError
from .gmm import GmmModel, gmm_fit_em, gmm_soft_assign
from .pca import PcaModel, pca_fit, pca_project

logger = logging.getLogger(__name__)

PROVENANCES = ("own-encoder", "external-file")


@dataclass(frozen=True)
class EmbeddingBatch:
    """Sentence vectors per language, in insertion order."""

    vectors: "OrderedDict[str, np.ndarray]"
    provenance: str = "own-encoder"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ClusteringDomainError(f"unknown provenance '{self.provenance}'")
        if not self.vectors:
            raise ClusteringDomainError("no languages to cluster")
        dims = {v.shape[1] for v in self.vectors.values()}
        if len(dims) != 1:
            raise ClusteringDomainError(f"languages have different vector dims {sorted(dims)}")
        for code, v in self.vectors.items():
            if v.shape[0] < 2:
                raise ClusteringDomainError(f"language '{code}' has {v.shape[0]} sentences (need >= 2)")

    @property
    def languages(self) -> List[str]:
        return list(self.vectors)

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[1]

    def stacked(self) -> Tuple[np.ndarray, List[str]]:
        """All vectors as one matrix plus the language of every row."""
        rows = np.concatenate(list(self.vectors.values()), axis=0)
        index = [code for code, v in self.vectors.items() for _ in range(v.shape[0])]
        return rows, index


def mean_pool_embed(
    model: Seq2SeqModel,
    sentences: Sequence[Sequence[int]],
    lang_tag: Optional[int] = None,
    batch_size: int = 32,
) -> np.ndarray:
    """Mean of the encoder's final states over each sentence's own tokens.

    The encoder input is prefixed with `lang_tag`, or with bos when no tag
    is given so the vectors carry no language label. The prefix position is
    left out of the mean. Runs in evaluation mode with no adapters.
    """
    for i, s in enumerate(sentences):
        if len(s) == 0:
            raise ClusteringDomainError(f"sentence {i} is empty")
    prefix = BOS_ID if lang_tag is None else int(lang_tag)
    out = np.zeros((len(sentences), model.cfg.model_dim))
    bare = model.view()
    for start in range(0, len(sentences), batch_size):
        chunk = [list(s) for s in sentences[start:start + batch_size]]
        states, is_pad = bare.encode_batch(chunk, [prefix] * len(chunk))
        keep = ~is_pad
        keep[:, 0] = False
        weights = keep / keep.sum(axis=1, keepdims=True)
        out[start:start + len(chunk)] = np.einsum("bt,bth->bh", weights, states.data)
    return out


def embed_corpora(
    model: Seq2SeqModel,
    corpora: Mapping[str, BitextCorpus],
    max_sentences: int = 500,
) -> EmbeddingBatch:
    """Encode up to `max_sentences` target-side sentences per language."""
    vectors = OrderedDict()
    for pair in corpora:
        corpus = corpora[pair]
        sentences = [tgt for _, tgt in corpus.examples[:max_sentences]]
        vectors[corpus.tgt_lang] = mean_pool_embed(model, sentences)
    return EmbeddingBatch(vectors, "own-encoder")


def load_external_embeddings(path: Union[str, Path]) -> EmbeddingBatch:
    """Read externally computed sentence vectors grouped by `#lang` sentinels."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ClusteringDomainError(f"{path}: empty embedding file")
    try:
        n, dim = (int(v) for v in lines[0].split())
    except ValueError:
        raise ClusteringDomainError(f"{path}:1: header must be '<n> <dim>'") from None

    rows: "OrderedDict[str, List[List[float]]]" = OrderedDict()
    current = None
    count = 0
    for line_no, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#lang"):
            parts = line.split()
            if len(parts) != 2:
                raise ClusteringDomainError(f"{path}:{line_no}: expected '#lang <code>'")
            current = parts[1]
            rows.setdefault(current, [])
            continue
        if current is None:
            raise ClusteringDomainError(f"{path}:{line_no}: vector before any '#lang' line")
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise ClusteringDomainError(f"{path}:{line_no}: non-numeric vector entry") from None
        if len(values) != dim:
            raise ClusteringDomainError(f"{path}:{line_no}: vector has {len(values)} values, header says {dim}")
        rows[current].append(values)
        count += 1
    if count != n:
        raise ClusteringDomainError(f"{path}: header announces {n} vectors, found {count}")
    vectors = OrderedDict((code, np.asarray(v, dtype=np.float64).reshape(-1, dim)) for code, v in rows.items())
    return EmbeddingBatch(vectors, "external-file")


def save_embeddings(batch: EmbeddingBatch, path: Union[str, Path]) -> None:
    total = sum(v.shape[0] for v in batch.vectors.values())
    lines = [f"{total} {batch.dim}"]
    for code, v in batch.vectors.items():
        lines.append(f"#lang {code}")
        lines.extend(" ".join(repr(float(x)) for x in row) for row in v)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def hard_assign_majority(responsibilities, lang_index: Sequence[str]) -> Dict[str, int]:
    """Per sentence argmax component, then the modal component per language.

    Both argmaxes break ties toward the lowest component id.
    """
    resp = np.asarray(responsibilities, dtype=np.float64)
    if resp.ndim != 2 or resp.shape[0] != len(lang_index):
        raise ClusteringDomainError(f"responsibilities {resp.shape} do not match {len(lang_index)} sentences")
    per_sentence = np.argmax(resp, axis=1)
    k = resp.shape[1]
    votes: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for code, component in zip(lang_index, per_sentence):
        if code not in votes:
            votes[code] = np.zeros(k, dtype=np.int64)
        votes[code][component] += 1
    return {code: int(np.argmax(counts)) for code, counts in votes.items()}


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class ClusterReport:
    confusion: pd.DataFrame
    cluster_family: Dict[int, str]
    misallocated: List[str]
    agreements: int
    scheme: GroupingScheme
    coordinates: Optional[pd.DataFrame] = None
    files: List[Path] = field(default_factory=list)


def cluster_report(
    assignment: Mapping[str, int],
    registry: LanguageRegistry,
    coordinates: Optional[Mapping[str, Sequence[float]]] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> ClusterReport:
    """Cross-tabulate clusters against families and emit a custom grouping.

    Every cluster is labelled with the family most of its languages belong to
    (ties go to the family listed first in the registry); a language is
    mis-allocated when its family differs from its cluster's label.

    Raises:
        ClusterCoverageError: The assignment misses registry languages or adds unknown ones.
    """
    missing = set(registry.codes) - set(assignment)
    unknown = set(assignment) - set(registry.codes)
    if missing or unknown:
        raise ClusterCoverageError(missing, unknown)

    families = registry.families()
    clusters = sorted(set(int(c) for c in assignment.values()))
    cluster_family: Dict[int, str] = {}
    for c in clusters:
        members = [code for code in registry.codes if assignment[code] == c]
        counts = [sum(registry[m].family == fam for m in members) for fam in families]
        cluster_family[c] = families[int(np.argmax(counts))]

    # Columns ordered by their family label so a perfect match is diagonal.
    ordered = sorted(clusters, key=lambda c: (families.index(cluster_family[c]), c))
    confusion = pd.DataFrame(0, index=families, columns=[f"cluster-{c}" for c in ordered])
    confusion.index.name = "family"
    misallocated = []
    for code in registry.codes:
        c = int(assignment[code])
        confusion.loc[registry[code].family, f"cluster-{c}"] += 1
        if registry[code].family != cluster_family[c]:
            misallocated.append(code)

    groups = OrderedDict(
        (f"cluster-{c}", [code for code in registry.codes if assignment[code] == c]) for c in ordered
    )
    check_partition(registry, groups)
    scheme = GroupingScheme.from_mapping("custom", groups)

    coords = None
    if coordinates is not None:
        coords = pd.DataFrame(
            [(code, registry[code].family, int(assignment[code]), *map(float, coordinates[code][:2]))
             for code in registry.codes if code in coordinates],
            columns=["language", "family", "cluster", "x", "y"],
        )

    report = ClusterReport(confusion, cluster_family, misallocated, len(registry) - len(misallocated), scheme, coords)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        confusion.to_csv(out / "cluster_confusion.tsv", sep="\t")
        pd.DataFrame(
            [(code, registry[code].family, int(assignment[code]), cluster_family[int(assignment[code])],
              code in misallocated) for code in registry.codes],
            columns=["language", "family", "cluster", "cluster_family", "misallocated"],
        ).to_csv(out / "cluster_assignment.tsv", sep="\t", index=False)
        report.files = [out / "cluster_confusion.tsv", out / "cluster_assignment.tsv"]
        if coords is not None:
            coords.to_csv(out / "cluster_coordinates.tsv", sep="\t", index=False)
            report.files.append(out / "cluster_coordinates.tsv")
    logger.info(f"Clustering agrees with families on {report.agreements}/{len(registry)} languages; "
                f"mis-allocated: {', '.join(misallocated) or 'none'}")
    return report


# ---------------------------------------------------------------------------
# Whole pipeline
# ---------------------------------------------------------------------------

@dataclass
class ClusterResult:
    pca: PcaModel
    gmm: GmmModel
    responsibilities: np.ndarray
    assignment: Dict[str, int]
    centroids_2d: Dict[str, np.ndarray]


def language_centroids_2d(batch: EmbeddingBatch) -> Dict[str, np.ndarray]:
    """Per-language mean of the sentence vectors projected on two principal axes."""
    x, index = batch.stacked()
    k = min(2, x.shape[0] - 1, x.shape[1])
    z = pca_project(pca_fit(x, k), x)
    if k < 2:
        z = np.hstack([z, np.zeros((z.shape[0], 2 - k))])
    index = np.asarray(index)
    return {code: z[index == code].mean(axis=0) for code in batch.languages}


def cluster_languages(
    batch: EmbeddingBatch,
    n_components: int,
    rng: np.random.Generator,
    pca_dim: int = 100,
    restarts: int = 5,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> ClusterResult:
    """PCA to min(pca_dim, n-1, dim) axes, GMM fit, then majority assignment."""
    x, index = batch.stacked()
    k = min(pca_dim, x.shape[0] - 1, x.shape[1])
    pca = pca_fit(x, k)
    z = pca_project(pca, x)
    gmm = gmm_fit_em(z, n_components, rng, max_iter=max_iter, tol=tol, restarts=restarts)
    resp = gmm_soft_assign(gmm, z)
    assignment = hard_assign_majority(resp, index)
    logger.info(f"Clustered {len(batch.languages)} languages ({x.shape[0]} sentences, PCA {k}) "
                f"into {n_components} components")
    return ClusterResult(pca, gmm, resp, assignment, language_centroids_2d(batch))
