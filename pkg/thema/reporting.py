# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Run directories, manifests and rendering of matrices and reports
"""

import csv
import io
import json
import logging
from collections.abc import AsyncGenerator, Sequence
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape

from rich.console import Console
from rich.table import Table

from thema.coding import (
    Codebook,
    CodingFailure,
    QuoteAudit,
    SaturationPoint,
    SaturationReport,
    codebook_to_csv,
)
from thema.corpus import Transcript
from thema.errors import ConfigError, ThemaError
from thema.evaluation import DiagonalReport, HumanScoreSet, SimilarityMatrix
from thema.helper import (
    DEFAULT_FLOCK_WAIT_INTERVAL,
    atomic_write_text,
    format_temperature,
    lock_run,
)
from thema.theming import (
    StabilityReport,
    SweepFailure,
    ThemeSet,
    stability_to_dict,
    theme_set_from_json,
    theme_set_to_json,
)

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
CODEBOOK_FILE = "codebook.csv"
SATURATION_FILE = "saturation.json"
STABILITY_FILE = "stability.json"
STABILITY_TEXT_FILE = "stability.txt"
SUMMARY_FILE = "summary.md"
RAW_DIR = "raw"
EVAL_DIR = "eval"
THEME_SET_PATTERN = "themes_T*.json"

DEFAULT_COLOR_SCALE = "#d73027,#f7f7f7,#4575b4"

SVG_CELL_SIZE = 56
SVG_FONT_SIZE = 11
SVG_CHAR_WIDTH = 7
SVG_MARGIN = 8

TEXT_REPORT_WIDTH = 120


def _fixed(value: float, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    # no negative zero in rendered output
    if text.lstrip("-").strip("0.") == "":
        return text.lstrip("-")
    return text


def _hex_to_rgb(color: str) -> tuple[int, int, int]:
    value = color.strip().lstrip("#")
    if len(value) != 6:
        raise ConfigError(f"Invalid color {color!r}. Use #rrggbb.")
    try:
        return (
            int(value[0:2], 16),
            int(value[2:4], 16),
            int(value[4:6], 16),
        )
    except ValueError:
        raise ConfigError(f"Invalid color {color!r}. Use #rrggbb.") from None


@dataclass(frozen=True)
class ColorScale:
    """
    Three color anchors for the values -1, 0 and +1
    """

    negative: tuple[int, int, int]
    neutral: tuple[int, int, int]
    positive: tuple[int, int, int]

    @classmethod
    def from_string(cls, colors: str) -> "ColorScale":
        parts = [part for part in colors.split(",") if part.strip()]
        if len(parts) != 3:
            raise ConfigError(
                f"A color scale needs three colors for -1, 0 and +1. Got "
                f"{colors!r}."
            )
        negative, neutral, positive = (_hex_to_rgb(part) for part in parts)
        return cls(negative, neutral, positive)

    def rgb(self, value: float) -> tuple[int, int, int]:
        value = min(1.0, max(-1.0, value))
        if value < 0:
            start, end, fraction = self.neutral, self.negative, -value
        else:
            start, end, fraction = self.neutral, self.positive, value
        return tuple(  # type: ignore[return-value]
            int(round(a + (b - a) * fraction)) for a, b in zip(start, end)
        )

    def color(self, value: float) -> str:
        return "#{:02x}{:02x}{:02x}".format(*self.rgb(value))


def _text_color(background: tuple[int, int, int]) -> str:
    red, green, blue = background
    luminance = 0.299 * red + 0.587 * green + 0.114 * blue
    return "#000000" if luminance >= 128 else "#ffffff"


def matrix_to_csv(matrix: SimilarityMatrix) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["", *matrix.col_labels])
    for label, row in zip(matrix.row_labels, matrix.values):
        writer.writerow([label, *(_fixed(float(v), 4) for v in row)])
    return out.getvalue()


def export_matrix_csv(matrix: SimilarityMatrix, path: str | Path) -> Path:
    """
    Write a matrix as CSV: a header of column labels after an empty cell,
    then one row per row label with values at 4 decimals
    """
    return atomic_write_text(path, matrix_to_csv(matrix))


def human_scores_csv(scores: HumanScoreSet, matrix: SimilarityMatrix) -> str:
    """
    Aligned pairs with their cosine similarity and normalized human score
    """
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["row_label", "col_label", "cosine", "human"])
    for row, col, value, human in scores.overlay(matrix):
        writer.writerow([row, col, _fixed(value, 4), _fixed(human, 4)])
    return out.getvalue()


def heatmap_svg(
    matrix: SimilarityMatrix, color_scale: ColorScale | None = None
) -> str:
    rows, cols = matrix.shape
    if not rows or not cols:
        raise ThemaError("Can't render an empty matrix")

    scale = color_scale or ColorScale.from_string(DEFAULT_COLOR_SCALE)
    left = SVG_MARGIN * 2 + SVG_CHAR_WIDTH * max(
        len(label) for label in matrix.row_labels
    )
    top = SVG_MARGIN * 2 + SVG_CHAR_WIDTH * max(
        len(label) for label in matrix.col_labels
    )
    width = left + cols * SVG_CELL_SIZE + SVG_MARGIN
    height = top + rows * SVG_CELL_SIZE + SVG_MARGIN

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="sans-serif" font-size="{SVG_FONT_SIZE}">',
        f"<title>{escape(matrix.embedder_id)} {escape(matrix.embed_text)}"
        "</title>",
    ]

    for j, label in enumerate(matrix.col_labels):
        x = left + j * SVG_CELL_SIZE + SVG_CELL_SIZE // 2
        y = top - SVG_MARGIN
        lines.append(
            f'<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">'
            f"{escape(label)}</text>"
        )

    for i, label in enumerate(matrix.row_labels):
        y = top + i * SVG_CELL_SIZE + SVG_CELL_SIZE // 2
        lines.append(
            f'<text x="{left - SVG_MARGIN}" y="{y}" text-anchor="end" '
            f'dominant-baseline="middle">{escape(label)}</text>'
        )
        for j in range(cols):
            value = float(matrix.values[i, j])
            background = scale.rgb(value)
            x = left + j * SVG_CELL_SIZE
            cell_y = top + i * SVG_CELL_SIZE
            lines.append(
                f'<rect x="{x}" y="{cell_y}" width="{SVG_CELL_SIZE}" '
                f'height="{SVG_CELL_SIZE}" fill="{scale.color(value)}" '
                'stroke="#ffffff"/>'
            )
            lines.append(
                f'<text x="{x + SVG_CELL_SIZE // 2}" y="{y}" '
                'text-anchor="middle" dominant-baseline="middle" '
                f'fill="{_text_color(background)}">{_fixed(value, 2)}</text>'
            )

    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_heatmap_svg(
    matrix: SimilarityMatrix,
    path: str | Path,
    color_scale: ColorScale | None = None,
) -> Path:
    """
    Render a matrix as SVG heatmap

    Cells are colored by linear interpolation between the anchors of the
    color scale and show their value with 2 decimals. The output only
    depends on the matrix and the scale.
    """
    return atomic_write_text(path, heatmap_svg(matrix, color_scale))


def stability_table(report: StabilityReport) -> str:
    """
    Render a stability report as plain text tables
    """
    console = Console(
        file=io.StringIO(),
        width=TEXT_REPORT_WIDTH,
        color_system=None,
        force_terminal=False,
    )

    clusters = Table(
        title=f"Recurring themes (cosine >= {report.match_threshold:g})"
    )
    clusters.add_column("Theme")
    for _, temperature in report.runs:
        clusters.add_column(f"T={temperature:g}")
    for cluster in report.clusters:
        by_temperature = {m.temperature: m.theme for m in cluster.members}
        clusters.add_row(
            cluster.name,
            *(by_temperature.get(t, "") for _, t in report.runs),
        )
    console.print(clusters)

    singletons = Table(title="Possibly not relevant")
    singletons.add_column("Theme")
    singletons.add_column("Run")
    for member in report.singletons:
        singletons.add_row(member.theme, f"T={member.temperature:g}")
    console.print(singletons)

    return console.file.getvalue()  # type: ignore[attr-defined]


@dataclass
class RunManifest:
    """
    Record of one run: resolved config, prompts, models and artifacts

    Args:
        file_index: Artifact name to path relative to the run directory
        durations: Seconds per phase
        token_totals: Input and output tokens per phase
        retries: Extra HTTP attempts per phase after transient failures
    """

    run_id: str
    config_snapshot: dict[str, Any] = field(default_factory=dict)
    prompt_fingerprints: dict[str, str] = field(default_factory=dict)
    model_ids: dict[str, str] = field(default_factory=dict)
    temperatures: list[float] = field(default_factory=list)
    file_index: dict[str, str] = field(default_factory=dict)
    durations: dict[str, float] = field(default_factory=dict)
    token_totals: dict[str, dict[str, int]] = field(default_factory=dict)
    retries: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    updated_at: str = ""

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunManifest":
        known = {name for name in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


class RunDirectory:
    """
    The artifacts of one run below <output root>/<run id>

    Every file written through this class is indexed in the manifest. The
    manifest itself is written last.
    """

    def __init__(self, root: str | Path, run_id: str) -> None:
        if not run_id or "/" in run_id or run_id in (".", ".."):
            raise ConfigError(f"Invalid run id {run_id!r}")
        self.run_id = run_id
        self.path = Path(root) / run_id
        manifest_file = self.path / MANIFEST_FILE
        if manifest_file.exists():
            try:
                self.manifest = RunManifest.from_dict(
                    json.loads(manifest_file.read_text(encoding="utf-8"))
                )
            except (OSError, ValueError, TypeError) as e:
                raise ConfigError(
                    f"Can't read manifest {manifest_file}: {e}"
                ) from e
        else:
            self.manifest = RunManifest(run_id=run_id)

    def __repr__(self) -> str:
        return f"RunDirectory({self.path})"

    @asynccontextmanager
    async def lock(
        self,
        *,
        console: Console | None = None,
        wait_interval: float | None = DEFAULT_FLOCK_WAIT_INTERVAL,
    ) -> AsyncGenerator[None, None]:
        async with lock_run(
            self.path, console=console, wait_interval=wait_interval
        ):
            yield

    def target(self, name: str) -> Path:
        path = self.path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_text(self, name: str, content: str) -> Path:
        path = atomic_write_text(self.target(name), content)
        self.manifest.file_index[name] = name
        return path

    def record(self, name: str, path: Path) -> Path:
        self.manifest.file_index[name] = str(path.relative_to(self.path))
        return path

    def archive_raw(self, key: str, text: str) -> Path:
        """
        Keep a raw model response as raw/<key>.json.txt
        """
        safe = key.replace("/", "_").replace("\\", "_")
        return self.write_text(f"{RAW_DIR}/{safe}.json.txt", text)

    @property
    def codebook_path(self) -> Path:
        return self.path / CODEBOOK_FILE

    def theme_set_name(self, temperature: float) -> str:
        return f"themes_T{format_temperature(temperature)}.json"

    def write_codebook(self, codebook: Codebook) -> Path:
        return self.record(
            CODEBOOK_FILE, codebook_to_csv(codebook, self.target(CODEBOOK_FILE))
        )

    def write_saturation(
        self,
        report: SaturationReport,
        curve: Sequence[SaturationPoint],
    ) -> Path:
        return self.write_text(
            SATURATION_FILE,
            json.dumps(
                {
                    **asdict(report),
                    "ratio_unique_to_total": report.ratio_unique_to_total,
                    "curve": [asdict(point) for point in curve],
                },
                ensure_ascii=False,
                indent=2,
            )
            + "\n",
        )

    def write_theme_set(self, theme_set: ThemeSet) -> Path:
        name = self.theme_set_name(theme_set.temperature)
        return self.record(name, theme_set_to_json(theme_set, self.target(name)))

    def theme_sets(self) -> list[ThemeSet]:
        """
        All theme sets stored in this run, ordered by temperature
        """
        sets = [
            theme_set_from_json(path)
            for path in sorted(self.path.glob(THEME_SET_PATTERN))
        ]
        return sorted(sets, key=lambda s: s.temperature)

    def write_stability(self, report: StabilityReport) -> Path:
        self.write_text(STABILITY_TEXT_FILE, stability_table(report))
        return self.write_text(
            STABILITY_FILE,
            json.dumps(stability_to_dict(report), ensure_ascii=False, indent=2)
            + "\n",
        )

    def write_matrix(
        self,
        name: str,
        matrix: SimilarityMatrix,
        color_scale: ColorScale | None = None,
    ) -> tuple[Path, Path]:
        csv_name = f"{EVAL_DIR}/{name}.csv"
        svg_name = f"{EVAL_DIR}/{name}.svg"
        return (
            self.write_text(csv_name, matrix_to_csv(matrix)),
            self.write_text(svg_name, heatmap_svg(matrix, color_scale)),
        )

    def write_manifest(self) -> Path:
        """
        Write manifest.json after checking that all indexed files exist
        """
        missing = [
            name
            for name, relative in self.manifest.file_index.items()
            if not (self.path / relative).exists()
        ]
        if missing:
            raise ThemaError(
                f"Indexed artifacts are missing: {', '.join(sorted(missing))}"
            )

        self.manifest.updated_at = datetime.now(timezone.utc).isoformat(
            timespec="seconds"
        )
        return atomic_write_text(
            self.target(MANIFEST_FILE),
            json.dumps(asdict(self.manifest), ensure_ascii=False, indent=2)
            + "\n",
        )


@dataclass
class EvaluationSummary:
    name: str
    matrix: SimilarityMatrix
    csv_path: str
    svg_path: str
    report: DiagonalReport | None = None
    human_scores: HumanScoreSet | None = None
    unmatched_rows: list[str] = field(default_factory=list)
    unmatched_cols: list[str] = field(default_factory=list)


@dataclass
class RunSummary:
    """
    Artifacts of a run as shown in summary.md. Everything is optional so a
    failed run still gets a summary of its partial results.
    """

    transcripts: Sequence[Transcript] = ()
    codebook: Codebook | None = None
    saturation: SaturationReport | None = None
    saturation_curve: Sequence[SaturationPoint] = ()
    quote_audit: QuoteAudit | None = None
    word_budget_overruns: int = 0
    coding_failures: Sequence[CodingFailure] = ()
    theme_sets: Sequence[ThemeSet] = ()
    sweep_failures: Sequence[SweepFailure] = ()
    stability: StabilityReport | None = None
    evaluations: Sequence[EvaluationSummary] = ()


def _cell(text: Any) -> str:
    return str(text).replace("|", "\\|").replace("\n", " ")


def _table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> list[str]:
    return [
        "| " + " | ".join(_cell(h) for h in header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
        *("| " + " | ".join(_cell(c) for c in row) + " |" for row in rows),
        "",
    ]


def render_run_summary(manifest: RunManifest, summary: RunSummary) -> str:
    lines = [f"# Run {manifest.run_id}", ""]

    if manifest.model_ids:
        lines += _table(
            ["Phase", "Model", "Prompt fingerprint"],
            [
                (
                    phase,
                    model,
                    manifest.prompt_fingerprints.get(phase, "")[:12],
                )
                for phase, model in sorted(manifest.model_ids.items())
            ],
        )

    lines += ["## Corpus", ""]
    if summary.transcripts:
        lines += [
            f"{len(summary.transcripts)} transcripts with "
            f"{sum(t.char_count for t in summary.transcripts)} characters.",
            "",
        ]

    if summary.codebook is not None:
        codebook = summary.codebook
        lines += [
            "## Codebook",
            "",
            f"{len(codebook.codes)} codes from "
            f"{len(codebook.per_transcript_counts)} transcripts.",
            "",
        ]
        lines += _table(
            ["Transcript", "Codes"],
            list(codebook.per_transcript_counts.items()),
        )
        if summary.saturation is not None:
            s = summary.saturation
            lines += [
                f"Saturation: {s.total_codes} total / {s.unique_codes} unique "
                f"= {s.ratio_total_to_unique:.2f} "
                f"(unique / total {s.ratio_unique_to_total:.2f}, "
                f"{s.normalization}).",
                "",
            ]
        if summary.saturation_curve:
            lines += _table(
                ["After transcript", "Total", "Unique", "Ratio"],
                [
                    (
                        p.transcript_id,
                        p.total_codes,
                        p.unique_codes,
                        f"{p.ratio_total_to_unique:.2f}",
                    )
                    for p in summary.saturation_curve
                ],
            )
        if summary.quote_audit is not None:
            audit = summary.quote_audit
            lines += [
                f"Verbatim quotes: {audit.verbatim}/{audit.total} "
                f"({audit.fraction:.0%}).",
                "",
            ]
        if summary.word_budget_overruns:
            lines += [
                f"Word budget overruns: {summary.word_budget_overruns}.",
                "",
            ]

    for theme_set in summary.theme_sets:
        lines += [f"## Themes at T={theme_set.temperature:g}", ""]
        if summary.codebook is not None:
            lines += [
                f"Coverage: "
                f"{theme_set.coverage(len(summary.codebook.codes)):.0%} of "
                "the codes.",
                "",
            ]
        lines += _table(
            ["#", "Theme", "Codes"],
            [
                (
                    number,
                    theme.name,
                    ", ".join(str(i) for i in theme.code_indices),
                )
                for number, theme in enumerate(theme_set.themes, start=1)
            ],
        )
        lines += [f"- {warning}" for warning in theme_set.warnings]
        if theme_set.warnings:
            lines.append("")

    if summary.stability is not None:
        report = summary.stability
        lines += [
            "## Stability",
            "",
            f"Themes matched at cosine >= {report.match_threshold:g} with "
            f"{report.embedder_id}.",
            "",
        ]
        lines += _table(
            ["Theme", *(f"T={t:g}" for _, t in report.runs)],
            [
                (
                    cluster.name,
                    *(
                        next(
                            (
                                m.theme
                                for m in cluster.members
                                if m.temperature == t
                            ),
                            "",
                        )
                        for _, t in report.runs
                    ),
                )
                for cluster in report.clusters
            ],
        )
        lines += ["### Possibly not relevant", ""]
        lines += [
            f"- {member.label}" for member in report.singletons
        ] or ["- none"]
        lines.append("")

    if summary.evaluations:
        lines += ["## Evaluation", ""]
    for evaluation in summary.evaluations:
        matrix = evaluation.matrix
        lines += [
            f"### {evaluation.name}",
            "",
            f"{matrix.shape[0]}x{matrix.shape[1]} matrix embedded with "
            f"{matrix.embedder_id} ({matrix.embed_text or 'names'}): "
            f"[csv]({evaluation.csv_path}), [svg]({evaluation.svg_path})",
            "",
        ]
        if evaluation.report is not None:
            diagonal = evaluation.report
            lines += [
                f"Diagonal: {diagonal.summary} (min {diagonal.minimum:.2f}, "
                f"mean {diagonal.mean:.2f}, max {diagonal.maximum:.2f}).",
                "",
            ]
            lines += _table(
                ["Row", "Column", "Cosine", ""],
                [
                    (
                        e.row_label,
                        e.col_label,
                        f"{e.score:.2f}",
                        "" if e.above else "below",
                    )
                    for e in diagonal.entries
                ],
            )
        if evaluation.human_scores is not None:
            scores = evaluation.human_scores
            lines += [f"Human scores: {scores.summary}.", ""]
            lines += _table(
                ["Row", "Column", "Cosine", "Human"],
                [
                    (row, col, f"{value:.2f}", f"{human:.2f}")
                    for row, col, value, human in scores.overlay(matrix)
                ],
            )
        if evaluation.unmatched_rows or evaluation.unmatched_cols:
            lines += ["Unmatched:", ""]
            lines += [f"- {label}" for label in evaluation.unmatched_rows]
            lines += [f"- {label}" for label in evaluation.unmatched_cols]
            lines.append("")

    failures = [
        f"coding {f.transcript_id}: {f.reason}" for f in summary.coding_failures
    ] + [
        f"themes T={f.temperature:g}: {f.reason}"
        for f in summary.sweep_failures
    ]
    failures += [f for f in manifest.failures if f not in failures]
    if failures:
        lines += ["## Failures", ""]
        lines += [f"- {failure}" for failure in failures]
        lines.append("")

    if manifest.notes:
        lines += ["## Notes", ""]
        lines += [f"- {note}" for note in manifest.notes]
        lines.append("")

    return "\n".join(lines)


def write_run_summary(
    run_directory: RunDirectory, summary: RunSummary
) -> Path:
    """
    Write summary.md into the run directory
    """
    return run_directory.write_text(
        SUMMARY_FILE, render_run_summary(run_directory.manifest, summary)
    )
