# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Initial coding of transcripts and the corpus codebook
"""

import asyncio
import csv
import io
import json
import logging
import re
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

from thema.corpus import Transcript
from thema.errors import (
    EXIT_PROVIDER,
    CodebookError,
    CodebookParseError,
    ParseError,
    ProviderError,
    TemplateError,
)
from thema.gateway import ChatProvider, ChatRequest, TokenUsage
from thema.helper import atomic_write_text, word_count
from thema.prompting import PromptPhase, PromptTemplate, render

logger = logging.getLogger(__name__)

CODEBOOK_HEADER = (
    "index",
    "transcript_id",
    "name",
    "description",
    "quote",
    "run_id",
)

# twice the word budgets stated in the coding prompt
DESCRIPTION_WORD_LIMIT = 50
QUOTE_WORD_LIMIT = 200

_FENCE_PATTERN = re.compile(r"```[A-Za-z]*\s*\n?(.*?)```", re.DOTALL)

ResponseCallback = Callable[[str, str], object]


class ParsedCode(NamedTuple):
    name: str
    description: str
    quote: str


@dataclass(frozen=True)
class InitialCode:
    index: int
    name: str
    description: str
    quote: str
    transcript_id: str
    run_id: str = ""

    def __post_init__(self) -> None:
        for name in ("name", "description", "quote"):
            if not getattr(self, name).strip():
                raise CodebookError(
                    f"Code {self.index} of {self.transcript_id} has an empty "
                    f"{name}"
                )
        if self.index < 0:
            raise CodebookError(f"Negative code index {self.index}")


@dataclass
class Codebook:
    codes: list[InitialCode]
    per_transcript_counts: dict[str, int]
    created_at: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc), compare=False
    )
    prompt_fingerprint: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if sum(self.per_transcript_counts.values()) != len(self.codes):
            raise CodebookError(
                "Per transcript counts do not add up to the number of codes"
            )
        for position, code in enumerate(self.codes):
            if code.index != position:
                raise CodebookError(
                    f"index gap: expected {position} but found {code.index}"
                )

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def transcript_ids(self) -> list[str]:
        return list(self.per_transcript_counts)


class Normalization(Enum):
    EXACT = "exact"
    CASEFOLD_TRIM = "casefold_trim"

    @property
    def description(self) -> str:
        if self is Normalization.EXACT:
            return "names compared verbatim"
        return "names compared after trimming whitespace and casefolding"

    def apply(self, name: str) -> str:
        if self is Normalization.EXACT:
            return name
        return name.strip().casefold()


@dataclass(frozen=True)
class SaturationReport:
    """
    Ratio between the total number of codes and the number of unique codes
    """

    total_codes: int
    unique_codes: int
    ratio_total_to_unique: float
    normalization: str

    @property
    def ratio_unique_to_total(self) -> float:
        return self.unique_codes / self.total_codes if self.total_codes else 0.0


@dataclass(frozen=True)
class SaturationPoint:
    transcript_id: str
    total_codes: int
    unique_codes: int
    ratio_total_to_unique: float


@dataclass(frozen=True)
class CodingFailure:
    transcript_id: str
    reason: str
    exit_code: int = EXIT_PROVIDER


@dataclass
class CodingResult:
    """
    Outcome of coding a whole corpus. codebook is None if every transcript
    failed.
    """

    codebook: Codebook | None
    failures: list[CodingFailure]
    token_usage: TokenUsage = field(default_factory=TokenUsage)


@dataclass(frozen=True)
class QuoteAudit:
    total: int
    verbatim: int

    @property
    def fraction(self) -> float:
        return self.verbatim / self.total if self.total else 0.0


def _balanced_regions(text: str) -> Iterable[str]:
    """
    Yield balanced {...} or [...] regions, outermost first, in text order
    """
    pairs = {"{": "}", "[": "]"}
    start = 0
    while True:
        positions = [p for p in (text.find("{", start), text.find("[", start))]
        positions = [p for p in positions if p >= 0]
        if not positions:
            return
        begin = min(positions)

        stack: list[str] = []
        in_string = False
        escaped = False
        end = None
        for position in range(begin, len(text)):
            char = text[position]
            if in_string:
                if escaped:
                    escaped = False
                elif char == "\\":
                    escaped = True
                elif char == '"':
                    in_string = False
            elif char == '"':
                in_string = True
            elif char in pairs:
                stack.append(pairs[char])
            elif char in "}]":
                if not stack or stack.pop() != char:
                    break
                if not stack:
                    end = position
                    break

        if end is not None:
            yield text[begin : end + 1]
        start = begin + 1


def extract_json(raw: str) -> Any:
    """
    Decode the JSON document of a model response

    Tries the response as is, then the content of code fences and finally
    every balanced bracket region in order.
    """
    candidates = [raw.strip()]
    candidates.extend(m.group(1).strip() for m in _FENCE_PATTERN.finditer(raw))

    for candidate in candidates:
        try:
            return json.loads(candidate)
        except ValueError:
            pass

    for region in _balanced_regions(raw):
        try:
            return json.loads(region)
        except ValueError:
            pass

    raise ParseError("no JSON found in response", raw=raw)


def _lookup(entry: Mapping[str, Any], key: str) -> Any:
    if key in entry:
        return entry[key]
    folded = key.casefold()
    for candidate, value in entry.items():
        if str(candidate).casefold() == folded:
            return value
    return None


def _as_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return " ".join(str(v) for v in value).strip()
    return str(value).strip()


def parse_codebook_json(
    raw: str, key_map: Mapping[str, str]
) -> list[ParsedCode]:
    """
    Extract (name, description, quote) triples from a coding response

    Args:
        raw: Model response, possibly wrapped in code fences or prose
        key_map: Template JSON key to canonical field mapping

    Entries lacking a field are skipped with a warning as long as one valid
    entry remains.
    """
    if not raw or not raw.strip():
        raise CodebookParseError("empty response", raw=raw)

    keys = {canonical: key for key, canonical in key_map.items()}
    try:
        document = extract_json(raw)
    except ParseError as e:
        raise CodebookParseError(str(e), raw=raw) from None

    if isinstance(document, list):
        container: Any = document
    elif isinstance(document, dict):
        container = _lookup(document, keys["container"])
        if container is None:
            raise CodebookParseError(
                f"container key '{keys['container']}' missing", raw=raw
            )
    else:
        raise CodebookParseError("JSON is neither object nor array", raw=raw)

    if isinstance(container, dict):
        # {"Name": {"descrizione": ..., "citazione": ...}, ...}
        entries = [
            {keys["name"]: name, **value} if isinstance(value, dict) else value
            for name, value in container.items()
        ]
    elif isinstance(container, list):
        entries = container
    else:
        raise CodebookParseError(
            f"'{keys['container']}' is not a list of codes", raw=raw
        )

    parsed: list[ParsedCode] = []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict):
            logger.warning("Skipping code entry %d: not an object", position)
            continue
        code = ParsedCode(
            name=_as_text(_lookup(entry, keys["name"])),
            description=_as_text(_lookup(entry, keys["description"])),
            quote=_as_text(_lookup(entry, keys["quote"])),
        )
        missing = [name for name, value in code._asdict().items() if not value]
        if missing:
            logger.warning(
                "Skipping code entry %d: missing %s",
                position,
                ", ".join(missing),
            )
            continue
        parsed.append(code)

    if entries and not parsed:
        raise CodebookParseError(
            "no code entry has a name, description and quote", raw=raw
        )
    return parsed


def word_budget_overruns(
    codes: Iterable[InitialCode],
) -> list[tuple[InitialCode, str, int]]:
    """
    Return (code, field, words) for descriptions and quotes exceeding twice
    the prompt's word budget
    """
    overruns = []
    for code in codes:
        words = word_count(code.description)
        if words > DESCRIPTION_WORD_LIMIT:
            overruns.append((code, "description", words))
        words = word_count(code.quote)
        if words > QUOTE_WORD_LIMIT:
            overruns.append((code, "quote", words))
    return overruns


async def code_transcript(
    transcript: Transcript,
    template: PromptTemplate,
    provider: ChatProvider,
    temperature: float,
    *,
    model: str,
    run_id: str = "",
    max_output_tokens: int | None = None,
    on_response: ResponseCallback | None = None,
    usage: list[TokenUsage] | None = None,
) -> list[InitialCode]:
    """
    Generate the initial codes of one transcript

    Codes are numbered 0..n-1 within the transcript. The raw response is
    handed to on_response before parsing so it is archived even if parsing
    fails.
    """
    if template.phase is not PromptPhase.CODING:
        raise TemplateError(
            f"Template {template.name} is not a coding template"
        )
    if template.language != transcript.language:
        logger.warning(
            "Coding transcript %s (%s) with a %s template",
            transcript.id,
            transcript.language,
            template.language,
        )

    request_args: dict[str, Any] = {}
    if max_output_tokens is not None:
        request_args["max_output_tokens"] = max_output_tokens

    response = await provider.chat(
        ChatRequest(
            model=model,
            prompt=render(template, {"testo": transcript.text}),
            temperature=temperature,
            seed_tag=f"{run_id}/{transcript.id}",
            **request_args,
        )
    )
    if on_response:
        on_response(transcript.id, response.text)
    if usage is not None:
        usage.append(response.usage)
    if response.truncated:
        logger.warning(
            "Coding response for %s was truncated; codes may be missing",
            transcript.id,
        )

    parsed = parse_codebook_json(response.text, template.output_key_map)
    if not parsed:
        raise CodebookParseError(
            f"zero codes for transcript {transcript.id}", raw=response.text
        )

    codes = [
        InitialCode(
            index=index,
            name=code.name,
            description=code.description,
            quote=code.quote,
            transcript_id=transcript.id,
            run_id=run_id,
        )
        for index, code in enumerate(parsed)
    ]
    for code, name, words in word_budget_overruns(codes):
        logger.warning(
            "Code '%s' of %s has a %d word %s",
            code.name,
            transcript.id,
            words,
            name,
        )
    return codes


async def code_corpus(
    transcripts: Sequence[Transcript],
    template: PromptTemplate,
    provider: ChatProvider,
    temperature: float,
    *,
    model: str,
    run_id: str = "",
    parallelism: int = 4,
    max_output_tokens: int | None = None,
    on_response: ResponseCallback | None = None,
) -> CodingResult:
    """
    Code all transcripts concurrently and aggregate the codebook

    A failing transcript is recorded and does not abort the others. The
    aggregation is keyed by transcript id so completion order does not
    matter.
    """
    semaphore = asyncio.Semaphore(parallelism)
    usage: list[TokenUsage] = []
    per_transcript: dict[str, list[InitialCode]] = {}
    failures: list[CodingFailure] = []

    async def run(transcript: Transcript) -> None:
        async with semaphore:
            try:
                per_transcript[transcript.id] = await code_transcript(
                    transcript,
                    template,
                    provider,
                    temperature,
                    model=model,
                    run_id=run_id,
                    max_output_tokens=max_output_tokens,
                    on_response=on_response,
                    usage=usage,
                )
            except (ProviderError, ParseError) as e:
                logger.warning("Coding of %s failed: %s", transcript.id, e)
                failures.append(
                    CodingFailure(transcript.id, str(e), e.exit_code)
                )

    await asyncio.gather(*(run(transcript) for transcript in transcripts))

    failures.sort(key=lambda failure: failure.transcript_id)
    total_usage = TokenUsage.total(usage)
    codebook = (
        aggregate_codebook(
            per_transcript, prompt_fingerprint=template.fingerprint
        )
        if per_transcript
        else None
    )
    return CodingResult(
        codebook=codebook, failures=failures, token_usage=total_usage
    )


def aggregate_codebook(
    per_transcript: Mapping[str, Sequence[InitialCode]],
    *,
    prompt_fingerprint: str = "",
    created_at: datetime | None = None,
) -> Codebook:
    """
    Merge per transcript codes into one codebook

    Global indices follow ascending transcript id, then the order within
    each transcript.
    """
    if not any(per_transcript.values()):
        raise CodebookError("Can't aggregate a codebook without codes")

    codes: list[InitialCode] = []
    counts: dict[str, int] = {}
    for transcript_id in sorted(per_transcript):
        transcript_codes = per_transcript[transcript_id]
        counts[transcript_id] = len(transcript_codes)
        for code in transcript_codes:
            codes.append(
                replace(code, index=len(codes), transcript_id=transcript_id)
            )

    return Codebook(
        codes=codes,
        per_transcript_counts=counts,
        created_at=created_at or datetime.now(timezone.utc),
        prompt_fingerprint=prompt_fingerprint,
    )


def split_codebook(codebook: Codebook) -> dict[str, list[InitialCode]]:
    """
    Inverse of aggregate_codebook: codes per transcript, renumbered from 0
    """
    per_transcript: dict[str, list[InitialCode]] = {
        transcript_id: [] for transcript_id in codebook.per_transcript_counts
    }
    for code in codebook.codes:
        codes = per_transcript.setdefault(code.transcript_id, [])
        codes.append(replace(code, index=len(codes)))
    return per_transcript


def saturation(
    codebook: Codebook,
    normalization: Normalization = Normalization.CASEFOLD_TRIM,
) -> SaturationReport:
    if not codebook.codes:
        raise CodebookError("Can't compute saturation of an empty codebook")

    total = len(codebook.codes)
    unique = len({normalization.apply(code.name) for code in codebook.codes})
    return SaturationReport(
        total_codes=total,
        unique_codes=unique,
        ratio_total_to_unique=total / unique,
        normalization=normalization.value,
    )


def saturation_curve(
    codebook: Codebook,
    normalization: Normalization = Normalization.CASEFOLD_TRIM,
) -> list[SaturationPoint]:
    """
    Cumulative totals and unique counts after each transcript
    """
    seen: set[str] = set()
    total = 0
    points = []
    per_transcript = split_codebook(codebook)
    for transcript_id, codes in per_transcript.items():
        total += len(codes)
        seen.update(normalization.apply(code.name) for code in codes)
        points.append(
            SaturationPoint(
                transcript_id=transcript_id,
                total_codes=total,
                unique_codes=len(seen),
                ratio_total_to_unique=total / len(seen) if seen else 0.0,
            )
        )
    return points


def _normalize_space(text: str) -> str:
    return " ".join(text.split()).casefold()


def quote_audit(
    codebook: Codebook, transcripts: Iterable[Transcript]
) -> QuoteAudit:
    """
    Count codes whose quote appears verbatim in the source transcript

    Whitespace and case are normalized. Reported only, never enforced.
    """
    texts = {t.id: _normalize_space(t.text) for t in transcripts}
    audited = [c for c in codebook.codes if c.transcript_id in texts]
    verbatim = sum(
        1
        for code in audited
        if _normalize_space(code.quote) in texts[code.transcript_id]
    )
    return QuoteAudit(total=len(audited), verbatim=verbatim)


def codebook_to_csv(codebook: Codebook, path: str | Path) -> Path:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(CODEBOOK_HEADER)
    for code in codebook.codes:
        writer.writerow(
            [
                code.index,
                code.transcript_id,
                code.name,
                code.description,
                code.quote,
                code.run_id,
            ]
        )
    return atomic_write_text(path, out.getvalue())


def codebook_from_csv(path: str | Path) -> Codebook:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8-sig", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != CODEBOOK_HEADER:
                raise CodebookError(
                    f"{path} does not match the codebook schema "
                    f"{','.join(CODEBOOK_HEADER)}"
                )

            codes: list[InitialCode] = []
            counts: dict[str, int] = {}
            end = reader.line_num
            for row in reader:
                line, end = end + 1, reader.line_num
                if len(row) != len(CODEBOOK_HEADER):
                    raise CodebookError(
                        f"{path}:{line} has {len(row)} columns, expected "
                        f"{len(CODEBOOK_HEADER)}"
                    )
                try:
                    index = int(row[0])
                except ValueError:
                    raise CodebookError(
                        f"{path}:{line} has a non numeric index {row[0]!r}"
                    ) from None
                if index != len(codes):
                    raise CodebookError(
                        f"{path}:{line} index gap: expected {len(codes)} but "
                        f"found {index}"
                    )
                code = InitialCode(
                    index=index,
                    transcript_id=row[1],
                    name=row[2],
                    description=row[3],
                    quote=row[4],
                    run_id=row[5],
                )
                codes.append(code)
                counts[code.transcript_id] = (
                    counts.get(code.transcript_id, 0) + 1
                )
    except UnicodeDecodeError as e:
        raise CodebookError(f"{path} is not a valid UTF-8 file") from e
    except OSError as e:
        raise CodebookError(f"Can't read codebook {path}: {e}") from e

    return Codebook(codes=codes, per_transcript_counts=counts)
