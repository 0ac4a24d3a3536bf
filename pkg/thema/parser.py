# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

import shtab

from thema.__version__ import __version__
from thema.config import (
    DEFAULT_CONFIG_FILE,
    DEFAULT_USER_CONFIG_FILE,
    PROVIDERS,
    Config,
    ConfigDict,
    find_config_file,
    to_temperatures,
)
from thema.errors import EXIT_USAGE, ConfigError
from thema.evaluation import EmbedText


class UsageErrorParser(ArgumentParser):
    """
    An ArgumentParser exiting with the thema usage error code
    """

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _to_defaults(values: ConfigDict) -> dict[str, Any]:
    defaults = {}

    for key, value in values.items():
        defaults[key.replace("-", "_")] = value

    return defaults


def temperatures_type(value: str) -> tuple[float, ...]:
    try:
        return to_temperatures(value)
    except ConfigError as e:
        raise ValueError(str(e)) from e


def _add_common_arguments(parser: ArgumentParser) -> None:
    parser.add_argument(
        "-h",
        "--help",
        help="Show this help message and exit.",
        action="store_true",
    )
    output_group = parser.add_mutually_exclusive_group()
    output_group.add_argument(
        "--verbose",
        "-v",
        action="count",
        help="Set log verbosity. `-vv` for debug output. "
        "(Default: %(default)s)",
    )
    output_group.add_argument(
        "--quiet", action="store_true", help="Only log warnings and errors."
    )
    parser.add_argument(
        "-c",
        "--config",
        help="Configuration file path. If not set %(prog)s "
        f"tries to load $THEMA_CONFIG, ./{DEFAULT_CONFIG_FILE} or "
        f"{DEFAULT_USER_CONFIG_FILE}.",
    )
    parser.add_argument(
        "--dry-run",
        action="store_true",
        help="Print the rendered prompts and planned requests without "
        "contacting any provider.",
    )

    run_group = parser.add_argument_group("run")
    run_group.add_argument(
        "--run-id",
        help="Run directory to create or continue. Generated if not set.",
    )
    run_group.add_argument(
        "--output-root",
        type=Path,
        help="Directory containing the run directories. "
        "(Default: %(default)s)",
    )
    wait_group = run_group.add_mutually_exclusive_group()
    wait_group.add_argument(
        "--no-wait",
        action="store_true",
        help="Fail directly if the run directory is locked by another "
        "process.",
    )
    wait_group.add_argument(
        "--wait-interval",
        type=int,
        help="Time to wait in seconds after failed lock attempt before "
        "re-trying to lock the run directory. (Default: %(default)s seconds)",
    )

    corpus_group = parser.add_argument_group("corpus")
    corpus_group.add_argument(
        "--corpus",
        type=Path,
        help="Directory with one transcript per file. (Default: %(default)s)",
    )
    corpus_group.add_argument(
        "--lang",
        dest="language",
        help="Language of the transcripts. (Default: %(default)s)",
    )
    corpus_group.add_argument(
        "--transcript-extension",
        help="File extension of transcripts. (Default: %(default)s)",
    )
    corpus_group.add_argument(
        "--max-transcript-chars",
        type=int,
        help="Reject transcripts longer than this. (Default: %(default)s)",
    )

    provider_group = parser.add_argument_group("provider")
    provider_group.add_argument(
        "--provider",
        choices=PROVIDERS,
        help="Use the HTTP endpoints or offline fixtures. "
        "(Default: %(default)s)",
    )
    provider_group.add_argument(
        "--fixture-dir",
        type=Path,
        help="Directory with fixtures.toml for the mock provider.",
    )
    provider_group.add_argument(
        "--chat-endpoint",
        help="Chat completions URL. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--chat-model",
        help="Model for initial coding. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--theming-model",
        help="Model for theme generation. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--chat-api-key-env",
        help="Environment variable holding the chat API key. "
        "(Default: %(default)s)",
    )
    provider_group.add_argument(
        "--embedding-endpoint",
        help="Embeddings URL. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--embedding-model",
        help="Embedding model. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--embedding-api-key-env",
        help="Environment variable holding the embedding API key. Falls "
        "back to the chat API key if unset. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--mock-embedding-dimension",
        type=int,
        help="Dimension of the offline hash embedding. "
        "(Default: %(default)s)",
    )
    provider_group.add_argument(
        "--request-timeout",
        type=float,
        help="Request timeout in seconds. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--max-output-tokens",
        type=int,
        help="Output token limit per request. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--parallelism",
        type=int,
        help="Maximum number of concurrent requests. (Default: %(default)s)",
    )
    provider_group.add_argument(
        "--rate-limit",
        type=float,
        help="Requests per minute. 0 disables the limit. "
        "(Default: %(default)s)",
    )
    provider_group.add_argument(
        "--max-attempts",
        type=int,
        choices=range(1, 6),
        help="Attempts per request for transient failures. "
        "(Default: %(default)s)",
    )

    analysis_group = parser.add_argument_group("analysis")
    analysis_group.add_argument(
        "--coding-template",
        help="builtin, builtin:<lang> or a template file. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--theming-template",
        help="builtin, builtin:<lang> or a template file. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--coding-temperature",
        type=float,
        help="Temperature for initial coding. (Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--temperature",
        dest="theming_temperature",
        type=float,
        help="Temperature for a single theme run. (Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--temps",
        dest="sweep_temperatures",
        type=temperatures_type,
        help="Comma separated temperatures of the refinement sweep. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--min-themes",
        type=int,
        help="Minimum number of themes requested. (Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--normalization",
        choices=("exact", "casefold_trim"),
        help="Code name equality for saturation. (Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--stability-threshold",
        type=float,
        help="Cosine similarity for matching themes across runs. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--diagonal-threshold",
        type=float,
        help="Cosine similarity an aligned pair should reach. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--embed-text",
        choices=[mode.value for mode in EmbedText],
        help="Embed names only or names with descriptions. "
        "(Default: %(default)s)",
    )
    analysis_group.add_argument(
        "--color-scale",
        help="Heatmap colors for -1, 0 and +1. (Default: %(default)s)",
    )


def _add_codebook_argument(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--codebook",
        type=Path,
        help="Codebook CSV. Defaults to the codebook of the run given by "
        "--run-id.",
    )


def _add_evaluation_arguments(
    parser: ArgumentParser, *, reference_required: bool
) -> None:
    parser.add_argument(
        "--reference",
        type=Path,
        required=reference_required,
        help="CSV of human reference categories with the columns "
        "id,label,detail.",
    )
    parser.add_argument(
        "--pairs",
        type=Path,
        help="CSV with the columns row_label,col_label pairing reference "
        "categories with themes. Pairs are chosen greedily if not set.",
    )
    parser.add_argument(
        "--scores",
        type=Path,
        help="CSV with the columns row_label,col_label,score holding human "
        "similarity scores between 0 and 10.",
    )


class CliParser:
    """
    An ArgumentParser for the thema CLI
    """

    def __init__(self) -> None:
        parser = UsageErrorParser(
            prog=Path(sys.argv[0]).name,
            add_help=False,
            description="Thematic analysis of interview transcripts with "
            "large language models.",
        )
        shtab.add_argument_to(parser)
        parser.add_argument(
            "--version",
            help="Print version then exit.",
            action="version",
            version=f"%(prog)s {__version__}",
        )
        parser.add_argument(
            "-h",
            "--help",
            help="Show this help message and exit.",
            action="store_true",
        )

        subparsers = parser.add_subparsers(
            dest="command", metavar="COMMAND", parser_class=UsageErrorParser
        )
        self.subparsers: dict[str, ArgumentParser] = {}

        self._add_command(
            subparsers,
            "code",
            "Generate initial codes for every transcript of the corpus.",
        )

        themes = self._add_command(
            subparsers,
            "themes",
            "Generate themes from a codebook at one temperature.",
        )
        _add_codebook_argument(themes)

        refine = self._add_command(
            subparsers,
            "refine",
            "Generate themes at several temperatures and compare their "
            "stability.",
        )
        _add_codebook_argument(refine)

        evaluate = self._add_command(
            subparsers,
            "eval",
            "Compare themes with human reference categories.",
        )
        evaluate.add_argument(
            "--themes",
            type=Path,
            help="Theme set JSON. Defaults to the theme set of the run given "
            "by --run-id at the theming temperature.",
        )
        _add_evaluation_arguments(evaluate, reference_required=True)

        compare = self._add_command(
            subparsers,
            "compare-prompts",
            "Code one transcript with two coding templates and compare the "
            "codes.",
        )
        compare.add_argument(
            "--transcript",
            required=True,
            help="Id (file name stem) of the transcript to code.",
        )
        compare.add_argument(
            "--template-a",
            help="First coding template. (Default: the coding template)",
        )
        compare.add_argument(
            "--template-b",
            default="builtin:en",
            help="Second coding template. (Default: %(default)s)",
        )
        compare.add_argument(
            "--pairs",
            type=Path,
            help="CSV with the columns row_label,col_label pairing codes of "
            "the first template with codes of the second.",
        )

        full_run = self._add_command(
            subparsers,
            "run",
            "Run coding, theming, refinement and, given reference "
            "categories, evaluation.",
        )
        _add_evaluation_arguments(full_run, reference_required=False)

        self.parser = parser

    def _add_command(
        self, subparsers: Any, name: str, description: str
    ) -> ArgumentParser:
        command = subparsers.add_parser(
            name, add_help=False, help=description, description=description
        )
        _add_common_arguments(command)
        self.subparsers[name] = command
        return command

    def _load_config(self, config_file: str | None) -> Config:
        config = Config()

        config_path = find_config_file(config_file)
        if config_path:
            config.load_from_config_file(config_path)

        return config

    def _set_defaults(self, config: ConfigDict) -> None:
        defaults = _to_defaults(config)
        for command in self.subparsers.values():
            command.set_defaults(**defaults)

    def parse_arguments(self, args: Sequence[str] | None = None) -> Namespace:
        """
        Parse CLI arguments
        """
        # Parse args to get the config file path passed as option
        known_args, _ = self.parser.parse_known_args(args)

        if known_args.command is None:
            self.parser.print_help()
            self.parser.exit(0 if known_args.help else 1)

        # Load the defaults from the config file if it exists.
        config = self._load_config(known_args.config)

        # the templates default to the language passed on the command line
        if known_args.language:
            config["language"] = known_args.language

        # apply defaults in config
        config.apply_settings()
        config.apply_dependent_settings()

        # set config as defaults for CLI to make them visible in --help
        self._set_defaults(config)

        if known_args.help:
            self.subparsers[known_args.command].print_help()
            self.parser.exit(0)

        return self.parser.parse_args(args)
