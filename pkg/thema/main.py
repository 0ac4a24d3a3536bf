# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import asyncio
import logging
import os
import sys
import time
from argparse import Namespace
from collections.abc import (
    AsyncIterator,
    Awaitable,
    Callable,
    Iterator,
    Sequence,
)
from contextlib import asynccontextmanager, contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import NoReturn

from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from thema.coding import (
    Codebook,
    aggregate_codebook,
    code_corpus,
    code_transcript,
    codebook_from_csv,
    codebook_to_csv,
    quote_audit,
    saturation,
    saturation_curve,
    word_budget_overruns,
)
from thema.config import DEFAULT_VERBOSITY, RunConfig
from thema.corpus import Transcript, load_corpus, load_reference_categories
from thema.errors import (
    ConfigError,
    CorpusError,
    PhaseFailedError,
    ThemaError,
)
from thema.evaluation import (
    AlignmentSource,
    align,
    compare_codebooks,
    diagonal_report,
    ingest_human_scores,
    labeled_set_from_categories,
    labeled_set_from_themes,
    similarity_matrix,
)
from thema.gateway import (
    ChatProvider,
    EmbeddingProvider,
    HttpChatProvider,
    HttpEmbeddingProvider,
    HttpProvider,
    RetryPolicy,
    TokenUsage,
    load_fixtures,
    mock_embedding_provider,
)
from thema.helper import format_temperature, make_run_id, spinner
from thema.parser import CliParser
from thema.prompting import (
    PromptPhase,
    PromptTemplate,
    render,
    resolve_template,
)
from thema.reporting import (
    EVAL_DIR,
    EvaluationSummary,
    RunDirectory,
    RunManifest,
    RunSummary,
    human_scores_csv,
    stability_table,
    write_run_summary,
)
from thema.theming import (
    ThemeSet,
    generate_themes,
    render_theming_prompt,
    stability,
    sweep_temperatures,
    theme_set_from_json,
)

__all__ = ("main",)

logger = logging.getLogger(__name__)


def setup_logging(console: Console, verbose: int) -> None:
    """
    Route the log records of the thema package to a rich console
    """
    if verbose <= 0:
        level = logging.WARNING
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG

    handler = RichHandler(
        console=console,
        show_path=False,
        show_time=verbose >= 2,
        markup=False,
    )
    package_logger = logging.getLogger("thema")
    package_logger.handlers.clear()
    package_logger.addHandler(handler)
    package_logger.setLevel(level)
    package_logger.propagate = False


def _api_key(environment_key: str) -> str:
    key = os.environ.get(environment_key)
    if not key:
        raise ConfigError(
            f"No API key found. Set the environment variable {environment_key}."
        )
    return key


def create_chat_provider(config: RunConfig) -> ChatProvider:
    if config.provider == "mock":
        return load_fixtures(config.fixture_dir)  # type: ignore[arg-type]

    return HttpChatProvider(
        config.chat_endpoint,
        _api_key(config.chat_api_key_env),
        timeout=config.request_timeout,
        parallelism=config.parallelism,
        rate_limit=config.rate_limit,
        retry_policy=RetryPolicy(max_attempts=config.max_attempts),
    )


def create_embedding_provider(config: RunConfig) -> EmbeddingProvider:
    if config.provider == "mock":
        return mock_embedding_provider(config.mock_embedding_dimension)

    key = os.environ.get(config.embedding_api_key_env) or _api_key(
        config.chat_api_key_env
    )
    return HttpEmbeddingProvider(
        config.embedding_endpoint,
        key,
        model=config.embedding_model,
        timeout=config.request_timeout,
        parallelism=config.parallelism,
        rate_limit=config.rate_limit,
        retry_policy=RetryPolicy(max_attempts=config.max_attempts),
    )


@dataclass
class Context:
    """
    State shared by the subcommands of one invocation

    Providers are created on first use so that dry runs never need
    credentials.
    """

    config: RunConfig
    console: Console
    error_console: Console
    verbose: int = DEFAULT_VERBOSITY
    _chat: ChatProvider | None = field(default=None, repr=False)
    _embedding: EmbeddingProvider | None = field(default=None, repr=False)

    def chat_provider(self) -> ChatProvider:
        if self._chat is None:
            self._chat = create_chat_provider(self.config)
        return self._chat

    def embedding_provider(self) -> EmbeddingProvider:
        if self._embedding is None:
            self._embedding = create_embedding_provider(self.config)
        return self._embedding

    async def aclose(self) -> None:
        for provider in (self._chat, self._embedding):
            if isinstance(provider, HttpProvider):
                await provider.aclose()

    @contextmanager
    def status(self, text: str) -> Iterator[None]:
        logger.debug(text)
        if self.verbose >= 1 and self.console.is_terminal:
            with spinner(self.console, text):
                yield
        else:
            yield


def _record_usage(
    manifest: RunManifest, phase: str, usage: TokenUsage
) -> None:
    manifest.token_totals[phase] = {
        "input": usage.input,
        "output": usage.output,
    }
    manifest.retries[phase] = usage.retries


def _add_unique(items: list[str], item: str) -> None:
    if item not in items:
        items.append(item)


def load_transcripts(config: RunConfig) -> list[Transcript]:
    if config.corpus is None:
        raise ConfigError("No corpus directory given. Use --corpus.")
    return load_corpus(
        config.corpus,
        config.language,
        extension=config.transcript_extension,
        max_chars=config.max_transcript_chars,
    )


def codebook_path(config: RunConfig, args: Namespace) -> Path:
    if args.codebook is not None:
        return args.codebook
    if config.run_id is None:
        raise ConfigError("No codebook given. Use --codebook or --run-id.")
    return RunDirectory(config.output_root, config.run_id).codebook_path


def theme_set_path(config: RunConfig, args: Namespace) -> Path:
    if args.themes is not None:
        return args.themes
    if config.run_id is None:
        raise ConfigError("No theme set given. Use --themes or --run-id.")
    run_directory = RunDirectory(config.output_root, config.run_id)
    return run_directory.path / run_directory.theme_set_name(
        config.theming_temperature
    )


def print_prompt(context: Context, title: str, prompt: str) -> None:
    context.console.rule(title)
    context.console.print(prompt, markup=False, highlight=False)


def print_request_plan(
    context: Context, what: str, model: str, temperature: float
) -> None:
    config = context.config
    target = (
        f"fixtures in {config.fixture_dir}"
        if config.provider == "mock"
        else config.chat_endpoint
    )
    context.console.print(
        f"Planned request: {what} with {model} at T={temperature:g} to "
        f"{target}",
        markup=False,
        highlight=False,
    )


@asynccontextmanager
async def open_run(
    context: Context,
) -> AsyncIterator[tuple[RunDirectory, RunSummary]]:
    """
    Lock the run directory and write summary and manifest when done

    Summary and manifest are written even if a phase fails so that partial
    results stay documented.
    """
    config = context.config
    run_directory = RunDirectory(
        config.output_root, config.run_id or make_run_id()
    )
    snapshot = config.snapshot()
    snapshot["run-id"] = run_directory.run_id
    run_directory.manifest.config_snapshot = snapshot
    summary = RunSummary()

    async with run_directory.lock(
        console=context.console if context.verbose >= 2 else None,
        wait_interval=config.lock_wait_interval,
    ):
        try:
            yield run_directory, summary
        except BaseException as e:
            if isinstance(e, ThemaError):
                _add_unique(run_directory.manifest.failures, str(e))
            # the phase error stays the one reported
            try:
                _write_run_results(context, run_directory, summary)
            except (ThemaError, OSError) as write_error:
                logger.error(
                    "Can't write the results of run %s: %s",
                    run_directory.run_id,
                    write_error,
                )
            raise

        _write_run_results(context, run_directory, summary)


def _write_run_results(
    context: Context, run_directory: RunDirectory, summary: RunSummary
) -> None:
    write_run_summary(run_directory, summary)
    run_directory.write_manifest()
    if context.verbose >= 1:
        context.console.print(
            f"Run {run_directory.run_id} written to {run_directory.path}"
        )


async def run_coding(
    context: Context, run_directory: RunDirectory, summary: RunSummary
) -> Codebook:
    config = context.config
    transcripts = load_transcripts(config)
    template = resolve_template(
        config.coding_template, PromptPhase.CODING, config.language
    )
    summary.transcripts = transcripts
    manifest = run_directory.manifest
    manifest.prompt_fingerprints["coding"] = template.fingerprint
    manifest.model_ids["coding"] = config.chat_model

    start = time.monotonic()
    with context.status(
        f"Coding {len(transcripts)} transcripts with {config.chat_model}"
    ):
        result = await code_corpus(
            transcripts,
            template,
            context.chat_provider(),
            config.coding_temperature,
            model=config.chat_model,
            run_id=run_directory.run_id,
            parallelism=config.parallelism,
            max_output_tokens=config.max_output_tokens,
            on_response=run_directory.archive_raw,
        )
    manifest.durations["coding"] = round(time.monotonic() - start, 3)
    _record_usage(manifest, "coding", result.token_usage)

    summary.coding_failures = result.failures
    for failure in result.failures:
        _add_unique(
            manifest.failures,
            f"coding {failure.transcript_id}: {failure.reason}",
        )

    if result.codebook is None:
        raise PhaseFailedError(
            f"Coding failed for all {len(transcripts)} transcripts",
            result.failures[0].exit_code,
        )

    codebook = result.codebook
    run_directory.write_codebook(codebook)
    report = saturation(codebook, config.normalization_mode)
    curve = saturation_curve(codebook, config.normalization_mode)
    run_directory.write_saturation(report, curve)

    summary.codebook = codebook
    summary.saturation = report
    summary.saturation_curve = curve
    summary.quote_audit = quote_audit(codebook, transcripts)
    summary.word_budget_overruns = len(word_budget_overruns(codebook.codes))

    if context.verbose >= 1:
        table = Table("Transcript", "Codes")
        for transcript_id, count in codebook.per_transcript_counts.items():
            table.add_row(transcript_id, str(count))
        context.console.print(table)

    context.console.print(
        f"{len(codebook.codes)} codes from "
        f"{len(codebook.per_transcript_counts)} transcripts"
    )
    context.console.print(
        f"Saturation {report.ratio_total_to_unique:.2f} "
        f"({report.total_codes} total / {report.unique_codes} unique)"
    )
    if result.failures:
        context.console.print(
            f"[yellow]Coding failed for {len(result.failures)} "
            "transcripts:[/yellow]"
        )
        for failure in result.failures:
            context.console.print(
                f"  {escape(failure.transcript_id)}: {escape(failure.reason)}"
            )
    return codebook


def _archive_themes(
    run_directory: RunDirectory,
) -> Callable[[float, str], Path]:
    def archive(temperature: float, text: str) -> Path:
        return run_directory.archive_raw(
            f"themes_T{format_temperature(temperature)}", text
        )

    return archive


def print_theme_set(context: Context, theme_set: ThemeSet) -> None:
    if context.verbose >= 1:
        table = Table(
            "#", "Theme", "Codes", title=f"T={theme_set.temperature:g}"
        )
        for number, theme in enumerate(theme_set.themes, start=1):
            table.add_row(str(number), theme.name, str(len(theme.code_indices)))
        context.console.print(table)

    context.console.print(
        f"{len(theme_set.themes)} themes at T={theme_set.temperature:g}"
    )


def _theming_template(config: RunConfig) -> PromptTemplate:
    return resolve_template(
        config.theming_template, PromptPhase.THEMING, config.language
    )


async def run_theming(
    context: Context,
    run_directory: RunDirectory,
    summary: RunSummary,
    codebook: Codebook,
) -> ThemeSet:
    config = context.config
    template = _theming_template(config)
    manifest = run_directory.manifest
    manifest.prompt_fingerprints["theming"] = template.fingerprint
    manifest.model_ids["theming"] = config.theming_model

    usage: list[TokenUsage] = []
    start = time.monotonic()
    with context.status(
        f"Generating themes from {len(codebook.codes)} codes with "
        f"{config.theming_model}"
    ):
        theme_set = await generate_themes(
            codebook,
            template,
            context.chat_provider(),
            config.theming_temperature,
            config.min_themes,
            model=config.theming_model,
            run_id=run_directory.run_id,
            max_output_tokens=config.max_output_tokens,
            archive=_archive_themes(run_directory),
            usage=usage,
        )
    manifest.durations["theming"] = round(time.monotonic() - start, 3)
    _record_usage(manifest, "theming", TokenUsage.total(usage))
    if theme_set.temperature not in manifest.temperatures:
        manifest.temperatures.append(theme_set.temperature)

    run_directory.write_theme_set(theme_set)
    summary.codebook = summary.codebook or codebook
    summary.theme_sets = [*summary.theme_sets, theme_set]
    print_theme_set(context, theme_set)
    return theme_set


async def run_refinement(
    context: Context,
    run_directory: RunDirectory,
    summary: RunSummary,
    codebook: Codebook,
) -> None:
    config = context.config
    template = _theming_template(config)
    manifest = run_directory.manifest
    manifest.prompt_fingerprints["theming"] = template.fingerprint
    manifest.model_ids["theming"] = config.theming_model

    prior = [
        theme_set
        for theme_set in run_directory.theme_sets()
        if all(
            abs(theme_set.temperature - temperature) > 1e-9
            for temperature in config.sweep_temperatures
        )
    ]

    start = time.monotonic()
    with context.status(
        "Generating themes at T="
        + ", ".join(f"{t:g}" for t in config.sweep_temperatures)
    ):
        result = await sweep_temperatures(
            codebook,
            template,
            context.chat_provider(),
            config.sweep_temperatures,
            config.min_themes,
            model=config.theming_model,
            run_id=run_directory.run_id,
            max_output_tokens=config.max_output_tokens,
            archive=_archive_themes(run_directory),
        )
    manifest.durations["refinement"] = round(time.monotonic() - start, 3)
    _record_usage(manifest, "refinement", result.token_usage)

    summary.sweep_failures = result.failures
    for failure in result.failures:
        _add_unique(
            manifest.failures,
            f"themes T={failure.temperature:g}: {failure.reason}",
        )
    if not result.theme_sets:
        raise PhaseFailedError(
            "Theme generation failed for all temperatures",
            result.failures[0].exit_code,
        )

    for theme_set in result.theme_sets:
        run_directory.write_theme_set(theme_set)
        if theme_set.temperature not in manifest.temperatures:
            manifest.temperatures.append(theme_set.temperature)
        print_theme_set(context, theme_set)

    theme_sets = sorted(
        [*prior, *result.theme_sets], key=lambda s: s.temperature
    )
    summary.codebook = summary.codebook or codebook
    summary.theme_sets = theme_sets

    if len(theme_sets) < 2:
        _add_unique(
            manifest.notes, "stability skipped: fewer than two theme sets"
        )
        return

    with context.status("Comparing themes across runs"):
        report = await stability(
            theme_sets,
            context.embedding_provider(),
            config.stability_threshold,
        )
    run_directory.write_stability(report)
    summary.stability = report
    context.console.print(
        stability_table(report), markup=False, highlight=False
    )


async def run_evaluation(
    context: Context,
    run_directory: RunDirectory,
    summary: RunSummary,
    theme_set: ThemeSet,
    reference: Path,
    pairs: Path | None,
    scores: Path | None,
) -> None:
    config = context.config
    mode = config.embed_text_mode
    categories = load_reference_categories(reference)
    rows = labeled_set_from_categories("reference", categories, mode)
    themes_id = f"themes_T{format_temperature(theme_set.temperature)}"
    cols = labeled_set_from_themes(themes_id, theme_set.themes, mode)

    with context.status(
        f"Comparing {len(rows.items)} reference categories with "
        f"{len(cols.items)} themes"
    ):
        matrix = await similarity_matrix(
            rows, cols, context.embedding_provider(), embed_text=mode
        )

    if pairs is not None:
        alignment = align(
            rows, cols, AlignmentSource.MANUAL_FILE, manual_file=pairs
        )
    else:
        alignment = align(
            rows, cols, AlignmentSource.GREEDY_AUTO, matrix=matrix
        )

    unmatched_rows = [r for r in rows.labels if r not in alignment.row_labels]
    unmatched_cols = [c for c in cols.labels if c not in alignment.col_labels]
    matrix = matrix.reordered(
        alignment.row_labels + unmatched_rows,
        alignment.col_labels + unmatched_cols,
    )
    report = diagonal_report(matrix, alignment, config.diagonal_threshold)
    human_scores = (
        ingest_human_scores(scores, alignment) if scores is not None else None
    )

    name = f"reference_vs_{themes_id}_{mode.value.replace('+', '_')}"
    csv_path, svg_path = run_directory.write_matrix(
        name, matrix, config.color_scale_value
    )
    if human_scores is not None:
        run_directory.write_text(
            f"{EVAL_DIR}/{name}_human.csv",
            human_scores_csv(human_scores, matrix),
        )

    summary.evaluations = [
        *summary.evaluations,
        EvaluationSummary(
            name=name,
            matrix=matrix,
            csv_path=str(csv_path.relative_to(run_directory.path)),
            svg_path=str(svg_path.relative_to(run_directory.path)),
            report=report,
            human_scores=human_scores,
            unmatched_rows=unmatched_rows,
            unmatched_cols=unmatched_cols,
        ),
    ]

    context.console.print(
        f"Diagonal: {report.summary} (embedded {mode.value})", markup=False
    )
    for entry in report.flagged:
        context.console.print(
            f"  below: {entry.row_label} / {entry.col_label} "
            f"{entry.score:.2f}",
            markup=False,
        )
    if human_scores is not None:
        table = Table("Row", "Column", "Cosine", "Human")
        for row, col, value, human in human_scores.overlay(matrix):
            table.add_row(
                escape(row), escape(col), f"{value:.2f}", f"{human:.2f}"
            )
        context.console.print(table)
        context.console.print(f"Human scores: {human_scores.summary}")


async def run_prompt_comparison(
    context: Context,
    run_directory: RunDirectory,
    summary: RunSummary,
    transcript_id: str,
    template_a: PromptTemplate,
    template_b: PromptTemplate,
    pairs: Path | None,
) -> None:
    config = context.config
    transcripts = {t.id: t for t in load_transcripts(config)}
    if transcript_id not in transcripts:
        raise CorpusError(
            f"Transcript {transcript_id} not found in {config.corpus}"
        )
    transcript = transcripts[transcript_id]
    summary.transcripts = [transcript]

    manifest = run_directory.manifest
    manifest.prompt_fingerprints["coding_a"] = template_a.fingerprint
    manifest.prompt_fingerprints["coding_b"] = template_b.fingerprint
    manifest.model_ids["coding"] = config.chat_model

    def archive(prefix: str) -> Callable[[str, str], Path]:
        def on_response(key: str, text: str) -> Path:
            return run_directory.archive_raw(f"{prefix}_{key}", text)

        return on_response

    usage: list[TokenUsage] = []
    start = time.monotonic()
    with context.status(f"Coding {transcript_id} with two templates"):
        codes_a, codes_b = await asyncio.gather(
            *(
                code_transcript(
                    transcript,
                    template,
                    context.chat_provider(),
                    config.coding_temperature,
                    model=config.chat_model,
                    run_id=run_directory.run_id,
                    max_output_tokens=config.max_output_tokens,
                    on_response=archive(prefix),
                    usage=usage,
                )
                for prefix, template in (("a", template_a), ("b", template_b))
            )
        )
    manifest.durations["coding"] = round(time.monotonic() - start, 3)
    _record_usage(manifest, "coding", TokenUsage.total(usage))

    codebooks = {}
    for prefix, codes, template in (
        ("a", codes_a, template_a),
        ("b", codes_b, template_b),
    ):
        codebook = aggregate_codebook(
            {transcript_id: codes}, prompt_fingerprint=template.fingerprint
        )
        name = f"codebook_{prefix}.csv"
        run_directory.record(
            name, codebook_to_csv(codebook, run_directory.target(name))
        )
        codebooks[prefix] = codebook

    with context.status("Comparing the codes of both templates"):
        comparison = await compare_codebooks(
            codebooks["a"].codes,
            codebooks["b"].codes,
            context.embedding_provider(),
            manual_pairs=pairs,
            threshold=config.diagonal_threshold,
            embed_text=config.embed_text_mode,
            a_id=template_a.name,
            b_id=template_b.name,
        )

    name = f"compare_prompts_{transcript_id}"
    csv_path, svg_path = run_directory.write_matrix(
        name, comparison.matrix, config.color_scale_value
    )
    run_directory.write_text(
        f"{EVAL_DIR}/{name}_unmatched.txt",
        "".join(
            f"{side}\t{label}\n"
            for side, labels in (
                ("a", comparison.unmatched_rows),
                ("b", comparison.unmatched_cols),
            )
            for label in labels
        ),
    )

    summary.evaluations = [
        EvaluationSummary(
            name=f"{template_a.name} vs {template_b.name} on {transcript_id}",
            matrix=comparison.matrix,
            csv_path=str(csv_path.relative_to(run_directory.path)),
            svg_path=str(svg_path.relative_to(run_directory.path)),
            report=comparison.report,
            unmatched_rows=comparison.unmatched_rows,
            unmatched_cols=comparison.unmatched_cols,
        )
    ]

    context.console.print(
        f"{len(codes_a)} codes with {template_a.name}, {len(codes_b)} codes "
        f"with {template_b.name}. Diagonal: {comparison.report.summary}",
        markup=False,
    )
    for label in comparison.unmatched_rows + comparison.unmatched_cols:
        context.console.print(f"  unmatched: {label}", markup=False)


def plan_coding(context: Context) -> None:
    config = context.config
    transcripts = load_transcripts(config)
    template = resolve_template(
        config.coding_template, PromptPhase.CODING, config.language
    )
    for transcript in transcripts:
        prompt = render(template, {"testo": transcript.text})
        if context.verbose >= 1:
            print_prompt(context, f"{transcript.id} ({template.name})", prompt)
        print_request_plan(
            context,
            f"coding of {transcript.id}",
            config.chat_model,
            config.coding_temperature,
        )


def plan_theming(
    context: Context, codebook: Codebook, temperatures: Sequence[float]
) -> None:
    config = context.config
    template = _theming_template(config)
    prompt = render_theming_prompt(codebook, template, config.min_themes)
    print_prompt(context, f"themes ({template.name})", prompt)
    for temperature in temperatures:
        print_request_plan(
            context, "theme generation", config.theming_model, temperature
        )


async def cmd_code(context: Context, args: Namespace) -> int:
    if context.config.dry_run:
        plan_coding(context)
        return 0

    async with open_run(context) as (run_directory, summary):
        await run_coding(context, run_directory, summary)
    return 0


async def cmd_themes(context: Context, args: Namespace) -> int:
    config = context.config
    codebook = codebook_from_csv(codebook_path(config, args))
    if config.dry_run:
        plan_theming(context, codebook, [config.theming_temperature])
        return 0

    async with open_run(context) as (run_directory, summary):
        await run_theming(context, run_directory, summary, codebook)
    return 0


async def cmd_refine(context: Context, args: Namespace) -> int:
    config = context.config
    codebook = codebook_from_csv(codebook_path(config, args))
    if config.dry_run:
        plan_theming(context, codebook, config.sweep_temperatures)
        return 0

    async with open_run(context) as (run_directory, summary):
        await run_refinement(context, run_directory, summary, codebook)
    return 0


async def cmd_eval(context: Context, args: Namespace) -> int:
    config = context.config
    theme_set = theme_set_from_json(theme_set_path(config, args))
    if config.dry_run:
        categories = load_reference_categories(args.reference)
        context.console.print(
            f"Planned request: embedding of {len(categories)} reference "
            f"categories and {len(theme_set.themes)} themes "
            f"({config.embed_text}) with {config.embedding_model}",
            markup=False,
        )
        return 0

    async with open_run(context) as (run_directory, summary):
        summary.theme_sets = [theme_set]
        await run_evaluation(
            context,
            run_directory,
            summary,
            theme_set,
            args.reference,
            args.pairs,
            args.scores,
        )
    return 0


async def cmd_compare_prompts(context: Context, args: Namespace) -> int:
    config = context.config
    template_a = resolve_template(
        args.template_a or config.coding_template,
        PromptPhase.CODING,
        config.language,
    )
    template_b = resolve_template(
        args.template_b, PromptPhase.CODING, config.language
    )
    if config.dry_run:
        transcripts = {t.id: t for t in load_transcripts(config)}
        if args.transcript not in transcripts:
            raise CorpusError(
                f"Transcript {args.transcript} not found in {config.corpus}"
            )
        for template in (template_a, template_b):
            print_prompt(
                context,
                f"{args.transcript} ({template.name})",
                render(template, {"testo": transcripts[args.transcript].text}),
            )
            print_request_plan(
                context,
                f"coding of {args.transcript}",
                config.chat_model,
                config.coding_temperature,
            )
        return 0

    async with open_run(context) as (run_directory, summary):
        await run_prompt_comparison(
            context,
            run_directory,
            summary,
            args.transcript,
            template_a,
            template_b,
            args.pairs,
        )
    return 0


async def cmd_run(context: Context, args: Namespace) -> int:
    config = context.config
    if config.dry_run:
        plan_coding(context)
        template = _theming_template(config)
        for temperature in (
            config.theming_temperature,
            *config.sweep_temperatures,
        ):
            print_request_plan(
                context,
                f"theme generation ({template.name})",
                config.theming_model,
                temperature,
            )
        return 0

    async with open_run(context) as (run_directory, summary):
        codebook = await run_coding(context, run_directory, summary)
        theme_set = await run_theming(
            context, run_directory, summary, codebook
        )
        await run_refinement(context, run_directory, summary, codebook)
        if args.reference is not None:
            await run_evaluation(
                context,
                run_directory,
                summary,
                theme_set,
                args.reference,
                args.pairs,
                args.scores,
            )
        else:
            _add_unique(
                run_directory.manifest.notes,
                "evaluation skipped: no reference file",
            )
    return 0


COMMANDS: dict[str, Callable[[Context, Namespace], Awaitable[int]]] = {
    "code": cmd_code,
    "themes": cmd_themes,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "compare-prompts": cmd_compare_prompts,
    "run": cmd_run,
}


async def thema(
    console: Console,
    error_console: Console,
    args: Sequence[str] | None = None,
) -> int:
    """
    Run a thema subcommand
    """
    parser = CliParser()
    parsed = parser.parse_arguments(args)

    if parsed.quiet:
        verbose = 0
    else:
        verbose = (
            DEFAULT_VERBOSITY if parsed.verbose is None else parsed.verbose
        )

    setup_logging(error_console, verbose)

    context = Context(
        config=RunConfig.from_values(vars(parsed)),
        console=console,
        error_console=error_console,
        verbose=verbose,
    )
    try:
        return await COMMANDS[parsed.command](context, parsed)
    finally:
        await context.aclose()


def main() -> NoReturn:
    """
    Main CLI function
    """
    console = Console()
    error_console = Console(stderr=True)

    try:
        sys.exit(asyncio.run(thema(console, error_console)))
    except ThemaError as e:
        error_console.print(f"[red]❌[/red]Error: {escape(str(e))}")
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        sys.exit(1)


if __name__ == "__main__":
    main()
