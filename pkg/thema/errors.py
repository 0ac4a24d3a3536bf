# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.


from collections.abc import Iterable

EXIT_USAGE = 1
EXIT_PROVIDER = 2
EXIT_PARSE = 3


class ThemaError(Exception):
    """
    Base exception class
    """

    exit_code = EXIT_USAGE


class ConfigError(ThemaError):
    """
    Error while processing a config
    """


class ConfigFileError(ConfigError):
    """
    Error while processing a config file
    """


class CorpusError(ThemaError):
    """
    Error while loading transcripts or reference categories
    """


class TemplateError(ThemaError):
    """
    Error while loading or rendering a prompt template
    """


class ProviderError(ThemaError):
    """
    Error while talking to a chat or embedding provider
    """

    exit_code = EXIT_PROVIDER


class AuthenticationError(ProviderError):
    """
    The provider rejected the credential. Never retried.
    """


class RetryExhaustedError(ProviderError):
    """
    A transient provider failure persisted for all attempts
    """

    def __init__(self, attempts: int, reason: str) -> None:
        super().__init__(
            f"Request failed after {attempts} attempts. Last error: {reason}"
        )
        self.attempts = attempts
        self.reason = reason


class FixtureNotFoundError(ProviderError):
    """
    A mock provider has no fixture for a prompt
    """


class EmbeddingError(ProviderError):
    """
    Error while computing embeddings
    """


class ParseError(ThemaError):
    """
    A model response could not be parsed

    Args:
        message: Error description
        raw: The raw response, kept for the audit archive
    """

    exit_code = EXIT_PARSE

    def __init__(self, message: str, *, raw: str | None = None) -> None:
        super().__init__(message)
        self.raw = raw


class CodebookParseError(ParseError):
    """
    A coding response contained no usable codebook
    """


class ThemeParseError(ParseError):
    """
    A theming response contained no usable themes
    """


class CodebookError(ThemaError):
    """
    Error while reading or writing a codebook file
    """

    exit_code = EXIT_PARSE


class EvaluationError(ThemaError):
    """
    Error while comparing labeled text sets
    """


class LabelMismatchError(EvaluationError):
    """
    Labels referenced by a pair or score file are not part of the compared
    sets
    """

    def __init__(
        self,
        unknown: Iterable[str],
        row_labels: Iterable[str],
        col_labels: Iterable[str],
    ) -> None:
        self.unknown = list(unknown)
        self.row_labels = list(row_labels)
        self.col_labels = list(col_labels)
        super().__init__(
            f"Unknown labels {self.unknown}. "
            f"Row labels are {self.row_labels}. "
            f"Column labels are {self.col_labels}."
        )


class FileLockingError(ThemaError):
    """
    An error during locking a file
    """


class PhaseFailedError(ThemaError):
    """
    Every item of a pipeline phase failed

    The exit code is taken from the underlying failures.
    """

    def __init__(self, message: str, exit_code: int = EXIT_USAGE) -> None:
        super().__init__(message)
        self.exit_code = exit_code
