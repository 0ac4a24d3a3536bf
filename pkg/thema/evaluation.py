# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Similarity matrices between labeled text sets, pair alignment, diagonal
reports, codebook comparison and ingestion of human similarity scores
"""

import asyncio
import csv
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from thema.errors import EvaluationError, LabelMismatchError
from thema.gateway import EmbeddingProvider, EmbeddingVector

logger = logging.getLogger(__name__)

DEFAULT_DIAGONAL_THRESHOLD = 0.6
MAX_HUMAN_SCORE = 10.0

# accepted floating point drift outside of [-1, 1]
CLAMP_TOLERANCE = 1e-9

PAIRS_HEADER = ("row_label", "col_label")
SCORES_HEADER = ("row_label", "col_label", "score")


class EmbedText(Enum):
    """
    Which text of an item is embedded
    """

    NAMES = "names"
    NAMES_DESCRIPTIONS = "names+descriptions"


class AlignmentSource(Enum):
    MANUAL_FILE = "manual_file"
    GREEDY_AUTO = "greedy_auto"


class Described(Protocol):
    name: str
    description: str


class Category(Protocol):
    label: str
    detail: str | None


@dataclass(frozen=True)
class LabeledTextSet:
    """
    Labeled texts to embed

    Args:
        id: Name of the set, e.g. "reference" or "themes_T0"
        items: (label, text) pairs. The text is what gets embedded.
    """

    id: str
    items: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise EvaluationError(f"Labeled text set {self.id} is empty")
        duplicates = [
            label
            for label, count in Counter(self.labels).items()
            if count > 1
        ]
        if duplicates:
            raise EvaluationError(
                f"Duplicate labels in set {self.id}: {', '.join(duplicates)}"
            )

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.items]

    @property
    def texts(self) -> list[str]:
        return [text for _, text in self.items]


def _described_text(item: Described, embed_text: EmbedText) -> str:
    if embed_text is EmbedText.NAMES or not item.description:
        return item.name
    return f"{item.name}: {item.description}"


def _disambiguate(labels: Iterable[str]) -> list[str]:
    seen: Counter[str] = Counter()
    result = []
    for label in labels:
        seen[label] += 1
        result.append(label if seen[label] == 1 else f"{label} ({seen[label]})")
    return result


def labeled_set_from_themes(
    set_id: str,
    themes: Iterable[Described],
    embed_text: EmbedText = EmbedText.NAMES,
) -> LabeledTextSet:
    themes = list(themes)
    return LabeledTextSet(
        set_id,
        tuple(
            (label, _described_text(theme, embed_text))
            for label, theme in zip(
                _disambiguate(t.name for t in themes), themes
            )
        ),
    )


def labeled_set_from_codes(
    set_id: str,
    codes: Iterable[Described],
    embed_text: EmbedText = EmbedText.NAMES,
) -> LabeledTextSet:
    """
    Build a labeled set from initial codes

    Repeated code names are labeled "name (2)", "name (3)" and so on.
    """
    return labeled_set_from_themes(set_id, codes, embed_text)


def labeled_set_from_categories(
    set_id: str,
    categories: Iterable[Category],
    embed_text: EmbedText = EmbedText.NAMES,
) -> LabeledTextSet:
    return LabeledTextSet(
        set_id,
        tuple(
            (
                category.label,
                f"{category.label} - {category.detail}"
                if embed_text is EmbedText.NAMES_DESCRIPTIONS
                and category.detail
                else category.label,
            )
            for category in categories
        ),
    )


def _clamp(value: float) -> float:
    if value > 1.0 + CLAMP_TOLERANCE or value < -1.0 - CLAMP_TOLERANCE:
        raise EvaluationError(
            f"Cosine similarity {value} is outside of [-1, 1]. The embedding "
            "provider returned broken vectors."
        )
    return min(1.0, max(-1.0, value))


def _as_array(vector: EmbeddingVector | Sequence[float] | np.ndarray) -> np.ndarray:
    if isinstance(vector, EmbeddingVector):
        return vector.as_array()
    return np.asarray(vector, dtype=np.float64)


def cosine(
    a: EmbeddingVector | Sequence[float] | np.ndarray,
    b: EmbeddingVector | Sequence[float] | np.ndarray,
) -> float:
    """
    Cosine similarity dot(a, b) / (|a| |b|) clamped to [-1, 1]
    """
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise EvaluationError(
            f"Dimension mismatch: {x.shape[0]} != {y.shape[0]}"
        )

    norm_x = np.linalg.norm(x)
    norm_y = np.linalg.norm(y)
    if norm_x == 0 or norm_y == 0:
        raise EvaluationError("Cosine similarity of a zero vector")

    return _clamp(float(np.dot(x, y) / (norm_x * norm_y)))


@dataclass
class SimilarityMatrix:
    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray
    embedder_id: str = ""
    embed_text: str = ""

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.row_labels), len(self.col_labels)):
            raise EvaluationError(
                f"Matrix of shape {self.values.shape} does not match "
                f"{len(self.row_labels)} row and {len(self.col_labels)} "
                "column labels"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_labels), len(self.col_labels)

    def value(self, row_label: str, col_label: str) -> float:
        try:
            i = self.row_labels.index(row_label)
            j = self.col_labels.index(col_label)
        except ValueError:
            raise LabelMismatchError(
                [
                    label
                    for label, labels in (
                        (row_label, self.row_labels),
                        (col_label, self.col_labels),
                    )
                    if label not in labels
                ],
                self.row_labels,
                self.col_labels,
            ) from None
        return float(self.values[i, j])

    def reordered(
        self, row_labels: Sequence[str], col_labels: Sequence[str]
    ) -> "SimilarityMatrix":
        rows = [self.row_labels.index(label) for label in row_labels]
        cols = [self.col_labels.index(label) for label in col_labels]
        return SimilarityMatrix(
            row_labels=list(row_labels),
            col_labels=list(col_labels),
            values=self.values[np.ix_(rows, cols)],
            embedder_id=self.embedder_id,
            embed_text=self.embed_text,
        )


def cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Pairwise cosine similarities between the rows of two 2-D arrays
    """
    if rows.shape[1] != cols.shape[1]:
        raise EvaluationError(
            f"Dimension mismatch: {rows.shape[1]} != {cols.shape[1]}"
        )
    row_norms = np.linalg.norm(rows, axis=1, keepdims=True)
    col_norms = np.linalg.norm(cols, axis=1, keepdims=True)
    if not (row_norms.all() and col_norms.all()):
        raise EvaluationError("Cosine similarity of a zero vector")

    values = (rows / row_norms) @ (cols / col_norms).T
    drift = np.abs(values) > 1.0 + CLAMP_TOLERANCE
    if drift.any():
        raise EvaluationError(
            "Cosine similarity outside of [-1, 1]. The embedding provider "
            "returned broken vectors."
        )
    return np.clip(values, -1.0, 1.0)


async def similarity_matrix(
    rows: LabeledTextSet,
    cols: LabeledTextSet,
    embed_provider: EmbeddingProvider,
    *,
    embed_text: EmbedText | str = "",
) -> SimilarityMatrix:
    """
    Embed two labeled sets and compute all row/column cosine similarities
    """
    row_vectors, col_vectors = await asyncio.gather(
        embed_provider.embed(rows.texts), embed_provider.embed(cols.texts)
    )
    values = cosine_matrix(
        np.vstack([v.as_array() for v in row_vectors]),
        np.vstack([v.as_array() for v in col_vectors]),
    )
    logger.debug(
        "Computed %dx%d similarity matrix %s vs %s with %s",
        *values.shape,
        rows.id,
        cols.id,
        embed_provider.name,
    )
    return SimilarityMatrix(
        row_labels=rows.labels,
        col_labels=cols.labels,
        values=values,
        embedder_id=embed_provider.name,
        embed_text=(
            embed_text.value if isinstance(embed_text, EmbedText) else embed_text
        ),
    )


@dataclass(frozen=True)
class PairAlignment:
    pairs: tuple[tuple[str, str], ...]
    source: AlignmentSource

    def __post_init__(self) -> None:
        for side, labels in (
            ("row", [row for row, _ in self.pairs]),
            ("column", [col for _, col in self.pairs]),
        ):
            repeated = [
                label for label, count in Counter(labels).items() if count > 1
            ]
            if repeated:
                raise EvaluationError(
                    f"Alignment repeats the {side} labels "
                    f"{', '.join(repeated)}"
                )

    @property
    def row_labels(self) -> list[str]:
        return [row for row, _ in self.pairs]

    @property
    def col_labels(self) -> list[str]:
        return [col for _, col in self.pairs]


def _read_csv_rows(
    file: Path, header: tuple[str, ...], what: str
) -> list[tuple[int, list[str]]]:
    try:
        with file.open("r", encoding="utf-8", newline="") as f:
            rows = [
                (line, [cell.strip() for cell in row])
                for line, row in enumerate(csv.reader(f), start=1)
                if row and any(cell.strip() for cell in row)
            ]
    except UnicodeDecodeError as e:
        raise EvaluationError(f"{file} is not a valid UTF-8 file: {e}") from e
    except OSError as e:
        raise EvaluationError(f"Can't read {what} {file}: {e}") from e

    if rows and tuple(rows[0][1]) == header:
        rows = rows[1:]

    for line, row in rows:
        if len(row) != len(header):
            raise EvaluationError(
                f"{file}:{line} has {len(row)} columns, expected "
                f"{','.join(header)}"
            )
    return rows


def load_pairs(file: str | Path) -> list[tuple[str, str]]:
    """
    Read a manual pair file with the columns row_label,col_label

    The header line is optional. A row with an empty col_label marks its
    row label as deliberately unpaired.
    """
    file = Path(file)
    return [
        (row, col)
        for _, (row, col) in _read_csv_rows(file, PAIRS_HEADER, "pair file")
        if row
    ]


def greedy_pairs(matrix: SimilarityMatrix) -> list[tuple[str, str]]:
    """
    Repeatedly pick the highest unused cell

    Ties are broken by the lowest row index, then the lowest column index.
    The pairs are returned in row order.
    """
    if not matrix.row_labels or not matrix.col_labels:
        raise EvaluationError("Can't align an empty matrix")

    rows, cols = matrix.shape
    cells = sorted(
        ((float(matrix.values[i, j]), i, j) for i in range(rows) for j in range(cols)),
        key=lambda cell: (-cell[0], cell[1], cell[2]),
    )
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    chosen = []
    for _, i, j in cells:
        if i in used_rows or j in used_cols:
            continue
        chosen.append((i, j))
        used_rows.add(i)
        used_cols.add(j)
        if len(chosen) == min(rows, cols):
            break

    return [
        (matrix.row_labels[i], matrix.col_labels[j]) for i, j in sorted(chosen)
    ]


def align(
    rows: LabeledTextSet,
    cols: LabeledTextSet,
    mode: AlignmentSource,
    *,
    manual_file: str | Path | None = None,
    matrix: SimilarityMatrix | None = None,
) -> PairAlignment:
    """
    Pair row labels with column labels

    Args:
        mode: manual_file reads the pairs from a CSV file, greedy_auto
            derives them from a similarity matrix
        manual_file: The pair file for manual mode
        matrix: The similarity matrix for greedy mode
    """
    if mode is AlignmentSource.MANUAL_FILE:
        if manual_file is None:
            raise EvaluationError("Manual alignment requires a pair file")
        pairs = [(row, col) for row, col in load_pairs(manual_file) if col]
        unknown = [row for row, _ in pairs if row not in rows.labels] + [
            col for _, col in pairs if col not in cols.labels
        ]
        if unknown:
            raise LabelMismatchError(unknown, rows.labels, cols.labels)
        return PairAlignment(tuple(pairs), AlignmentSource.MANUAL_FILE)

    if matrix is None:
        raise EvaluationError("Greedy alignment requires a similarity matrix")
    return PairAlignment(tuple(greedy_pairs(matrix)), AlignmentSource.GREEDY_AUTO)


@dataclass(frozen=True)
class DiagonalEntry:
    row_label: str
    col_label: str
    score: float
    above: bool


@dataclass
class DiagonalReport:
    threshold: float
    entries: list[DiagonalEntry]

    @property
    def total(self) -> int:
        return len(self.entries)

    @property
    def above_count(self) -> int:
        return sum(entry.above for entry in self.entries)

    @property
    def flagged(self) -> list[DiagonalEntry]:
        return [entry for entry in self.entries if not entry.above]

    @property
    def minimum(self) -> float:
        return min(entry.score for entry in self.entries)

    @property
    def maximum(self) -> float:
        return max(entry.score for entry in self.entries)

    @property
    def mean(self) -> float:
        return float(np.mean([entry.score for entry in self.entries]))

    @property
    def summary(self) -> str:
        return f"{self.above_count}/{self.total} above {self.threshold:g}"


def diagonal_report(
    matrix: SimilarityMatrix,
    alignment: PairAlignment,
    threshold: float = DEFAULT_DIAGONAL_THRESHOLD,
) -> DiagonalReport:
    """
    Score every aligned pair against a threshold
    """
    if not alignment.pairs:
        raise EvaluationError("Can't report on an empty alignment")

    entries = []
    for row, col in alignment.pairs:
        score = matrix.value(row, col)
        entries.append(DiagonalEntry(row, col, score, score >= threshold))

    report = DiagonalReport(threshold=threshold, entries=entries)
    for entry in report.flagged:
        logger.info(
            "Pair '%s' / '%s' scores %.2f below %g",
            entry.row_label,
            entry.col_label,
            entry.score,
            threshold,
        )
    return report


@dataclass
class CodebookComparison:
    """
    Similarity of two code lists

    The matrix lists paired codes first in pair order so that the pairs
    form its diagonal. Unpaired codes follow.
    """

    matrix: SimilarityMatrix
    alignment: PairAlignment
    report: DiagonalReport
    unmatched_rows: list[str] = field(default_factory=list)
    unmatched_cols: list[str] = field(default_factory=list)


async def compare_codebooks(
    a: Iterable[Described],
    b: Iterable[Described],
    embed_provider: EmbeddingProvider,
    *,
    manual_pairs: str | Path | None = None,
    threshold: float = DEFAULT_DIAGONAL_THRESHOLD,
    embed_text: EmbedText = EmbedText.NAMES,
    a_id: str = "a",
    b_id: str = "b",
) -> CodebookComparison:
    """
    Compare the codes of two codebooks by name similarity

    Without a pair file the codes are paired greedily.
    """
    rows = labeled_set_from_codes(a_id, a, embed_text)
    cols = labeled_set_from_codes(b_id, b, embed_text)
    matrix = await similarity_matrix(
        rows, cols, embed_provider, embed_text=embed_text
    )

    if manual_pairs is not None:
        alignment = align(
            rows, cols, AlignmentSource.MANUAL_FILE, manual_file=manual_pairs
        )
    else:
        alignment = align(
            rows, cols, AlignmentSource.GREEDY_AUTO, matrix=matrix
        )

    unmatched_rows = [r for r in rows.labels if r not in alignment.row_labels]
    unmatched_cols = [c for c in cols.labels if c not in alignment.col_labels]
    ordered = matrix.reordered(
        alignment.row_labels + unmatched_rows,
        alignment.col_labels + unmatched_cols,
    )
    return CodebookComparison(
        matrix=ordered,
        alignment=alignment,
        report=diagonal_report(ordered, alignment, threshold),
        unmatched_rows=unmatched_rows,
        unmatched_cols=unmatched_cols,
    )


@dataclass(frozen=True)
class HumanScore:
    row_label: str
    col_label: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= MAX_HUMAN_SCORE:
            raise EvaluationError(
                f"Score {self.score:g} for '{self.row_label}' / "
                f"'{self.col_label}' is not within [0, {MAX_HUMAN_SCORE:g}]"
            )

    @property
    def normalized(self) -> float:
        return self.score / MAX_HUMAN_SCORE


@dataclass
class HumanScoreSet:
    scores: list[HumanScore]
    rater_id: str = ""

    @property
    def normalized(self) -> list[float]:
        return [score.normalized for score in self.scores]

    @property
    def at_maximum(self) -> int:
        return sum(score.score == MAX_HUMAN_SCORE for score in self.scores)

    @property
    def minimum(self) -> float:
        return min(score.score for score in self.scores)

    @property
    def maximum(self) -> float:
        return max(score.score for score in self.scores)

    @property
    def summary(self) -> str:
        return f"{self.at_maximum} at maximum, min {self.minimum:g}"

    def overlay(
        self, matrix: SimilarityMatrix
    ) -> list[tuple[str, str, float, float]]:
        """
        Join human scores with the matrix

        Returns (row label, column label, cosine, normalized human score)
        per scored pair.
        """
        return [
            (
                score.row_label,
                score.col_label,
                matrix.value(score.row_label, score.col_label),
                score.normalized,
            )
            for score in self.scores
        ]


def ingest_human_scores(
    file: str | Path, alignment: PairAlignment, *, rater_id: str = ""
) -> HumanScoreSet:
    """
    Read human similarity scores on a 0 to 10 scale for aligned pairs

    The CSV columns are row_label,col_label,score. The header line is
    optional.
    """
    file = Path(file)
    pairs = set(alignment.pairs)
    scores = []
    for line, (row, col, value) in _read_csv_rows(
        file, SCORES_HEADER, "score file"
    ):
        if (row, col) not in pairs:
            raise EvaluationError(
                f"{file}:{line} scores the unknown pair '{row}' / '{col}'. "
                f"Aligned pairs: "
                + "; ".join(f"{r} / {c}" for r, c in alignment.pairs)
            )
        try:
            score = float(value)
        except ValueError:
            raise EvaluationError(
                f"{file}:{line} has the invalid score {value!r}"
            ) from None
        scores.append(HumanScore(row, col, score))

    if not scores:
        raise EvaluationError(f"{file} contains no scores")

    score_set = HumanScoreSet(scores=scores, rater_id=rater_id or file.stem)
    logger.info("Human scores: %s", score_set.summary)
    return score_set
