# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Loading of interview transcripts and human reference categories
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from thema.errors import CorpusError

logger = logging.getLogger(__name__)

DEFAULT_TRANSCRIPT_EXTENSION = ".txt"
DEFAULT_MAX_TRANSCRIPT_CHARS = 48_000

REFERENCE_HEADER = ("id", "label", "detail")


@dataclass(frozen=True)
class Transcript:
    """
    One interview document

    The text is passed to the coding prompt untouched, including any
    interviewer/interviewee turn markup.
    """

    id: str
    language: str
    text: str
    source_path: Path = field(compare=False)

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError(f"empty transcript {self.source_path}")

    @property
    def char_count(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class ReferenceCategory:
    """
    A human produced analysis category used as comparison standard
    """

    id: str
    label: str
    detail: str | None = None


def read_transcript(
    path: Path,
    language: str,
    *,
    max_chars: int | None = DEFAULT_MAX_TRANSCRIPT_CHARS,
) -> Transcript:
    """
    Read a single transcript file. The id is the file name stem.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path} is not a valid UTF-8 file: {e}") from e
    except OSError as e:
        raise CorpusError(f"Can't read transcript {path}: {e}") from e

    if not text.strip():
        raise CorpusError(f"empty transcript {path}")

    if max_chars is not None and len(text) > max_chars:
        raise CorpusError(
            f"Transcript {path} has {len(text)} characters which exceeds the "
            f"budget of {max_chars}. Split the interview into several files "
            "or raise max-transcript-chars."
        )

    return Transcript(
        id=path.stem, language=language, text=text, source_path=path
    )


def load_corpus(
    directory: str | Path,
    language: str,
    *,
    extension: str = DEFAULT_TRANSCRIPT_EXTENSION,
    max_chars: int | None = DEFAULT_MAX_TRANSCRIPT_CHARS,
) -> list[Transcript]:
    """
    Load all transcripts of a directory sorted by id

    Args:
        directory: Directory containing one transcript per file
        language: Language tag applied to all transcripts, e.g. "it"
        extension: File extension of transcript files
        max_chars: Reject transcripts longer than this. None disables the
            check.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"Corpus directory {directory} does not exist.")

    files = [p for p in directory.glob(f"*{extension}") if p.is_file()]
    if not files:
        raise CorpusError(
            f"Corpus directory {directory} contains no {extension} files."
        )

    transcripts = [
        read_transcript(p, language, max_chars=max_chars) for p in files
    ]
    transcripts.sort(key=lambda t: t.id)

    seen: set[str] = set()
    for transcript in transcripts:
        if transcript.id in seen:
            raise CorpusError(f"Duplicate transcript id {transcript.id}")
        seen.add(transcript.id)

    logger.info(
        "Loaded %d transcripts (%d characters) from %s",
        len(transcripts),
        sum(t.char_count for t in transcripts),
        directory,
    )
    return transcripts


def load_reference_categories(file: str | Path) -> list[ReferenceCategory]:
    """
    Load reference categories from a CSV file with the header id,label,detail

    Row order is preserved. An empty detail cell becomes None.
    """
    file = Path(file)
    try:
        with file.open("r", encoding="utf-8-sig", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != (
                REFERENCE_HEADER
            ):
                raise CorpusError(
                    f"{file} must start with the header "
                    f"{','.join(REFERENCE_HEADER)}"
                )

            categories: list[ReferenceCategory] = []
            seen: set[str] = set()
            end = reader.line_num
            for row in reader:
                # records may span lines inside quoted cells
                line, end = end + 1, reader.line_num
                if not row:
                    continue
                if len(row) != len(REFERENCE_HEADER):
                    raise CorpusError(
                        f"{file}:{line} has {len(row)} columns, expected "
                        f"{len(REFERENCE_HEADER)}"
                    )
                category_id, label, detail = (cell.strip() for cell in row)
                if not label:
                    raise CorpusError(f"{file}:{line} missing label")
                if category_id in seen:
                    raise CorpusError(
                        f"{file}:{line} duplicate id {category_id}"
                    )
                seen.add(category_id)
                categories.append(
                    ReferenceCategory(
                        id=category_id, label=label, detail=detail or None
                    )
                )
    except UnicodeDecodeError as e:
        raise CorpusError(f"{file} is not a valid UTF-8 file: {e}") from e
    except OSError as e:
        raise CorpusError(f"Can't read reference file {file}: {e}") from e

    return categories
