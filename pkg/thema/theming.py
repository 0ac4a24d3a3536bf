# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Theme generation, temperature sweeps and cross-run theme stability
"""

import asyncio
import json
import logging
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from thema.coding import Codebook, extract_json
from thema.errors import (
    EXIT_PROVIDER,
    ConfigError,
    EvaluationError,
    ParseError,
    ProviderError,
    TemplateError,
    ThemeParseError,
)
from thema.evaluation import cosine
from thema.gateway import (
    MAX_TEMPERATURE,
    ChatProvider,
    ChatRequest,
    EmbeddingProvider,
    TokenUsage,
)
from thema.helper import atomic_write_text, word_count
from thema.prompting import PromptPhase, PromptTemplate, format_code_list, render

logger = logging.getLogger(__name__)

DEFAULT_STABILITY_THRESHOLD = 0.7
DEFAULT_SWEEP_TEMPERATURES = (0.25, 0.5, 0.75)
THEME_DESCRIPTION_WORD_LIMIT = 240

# score tolerance so that identical texts match at threshold 1.0
_SCORE_TOLERANCE = 1e-9

_NAME_KEYS = ("nome", "name", "tema", "theme", "titolo", "title")
_DESCRIPTION_KEYS = ("descrizione", "description")
_CODES_KEYS = (
    "categorie",
    "codes",
    "codici",
    "indici",
    "indices",
    "categories",
    "code_indices",
)
_CONTAINER_KEYS = ("temi", "themes")

_THEME_PREFIX = re.compile(r"^\s*(?:tema|theme)\s*\d+\s*[:.\-–—]\s*", re.I)
_HEADER_LINE = re.compile(
    r"^[\s#*>\-]*(?:tema|theme)\s+(\d+)\s*\**\s*[:.\-–—]\s*(.*?)[\s*]*$", re.I
)
_INDEX_LINE = re.compile(
    r"^[\s#*>\-]*(?:categorie|codici|codes|categories|indici|indices)"
    r"[^:\n]*:\s*(.*)$",
    re.I,
)
_DESCRIPTION_LABEL = re.compile(
    r"^[\s*]*(?:descrizione|description)[\s*]*:\s*", re.I
)

ResponseArchiver = Callable[[float, str], Path | None]


@dataclass(frozen=True)
class Theme:
    name: str
    description: str
    code_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ThemeParseError("theme without name")
        if len(set(self.code_indices)) != len(self.code_indices):
            raise ThemeParseError(
                f"theme {self.name} lists a code index twice"
            )

    @property
    def text(self) -> str:
        return (
            f"{self.name}: {self.description}" if self.description else self.name
        )


@dataclass
class ThemeSet:
    run_id: str
    temperature: float
    min_themes: int
    themes: list[Theme]
    raw_response_path: str | None = None
    model: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def below_minimum(self) -> bool:
        return len(self.themes) < self.min_themes

    def coverage(self, codebook_size: int) -> float:
        """
        Fraction of codebook indices referenced by at least one theme
        """
        if not codebook_size:
            return 0.0
        covered = {i for theme in self.themes for i in theme.code_indices}
        return len(covered) / codebook_size


@dataclass(frozen=True)
class SweepFailure:
    temperature: float
    reason: str
    exit_code: int = EXIT_PROVIDER


@dataclass
class SweepResult:
    theme_sets: list[ThemeSet]
    failures: list[SweepFailure]
    token_usage: TokenUsage = field(default_factory=TokenUsage)


@dataclass(frozen=True)
class ClusterMember:
    run_id: str
    temperature: float
    theme: str

    @property
    def label(self) -> str:
        return f"T={self.temperature:g}: {self.theme}"


@dataclass(frozen=True)
class PairScore:
    first: str
    second: str
    score: float


@dataclass
class ThemeCluster:
    name: str
    members: list[ClusterMember]
    similarities: list[PairScore]


@dataclass
class StabilityReport:
    runs: list[tuple[str, float]]
    clusters: list[ThemeCluster]
    singletons: list[ClusterMember]
    match_threshold: float
    embedder_id: str = ""

    @property
    def theme_count(self) -> int:
        return sum(len(c.members) for c in self.clusters) + len(self.singletons)


def _lookup_any(entry: Mapping[str, Any], keys: Sequence[str]) -> Any:
    folded = {str(k).casefold(): v for k, v in entry.items()}
    for key in keys:
        if key.casefold() in folded:
            return folded[key.casefold()]
    return None


def _indices(value: Any) -> list[int]:
    if value is None:
        return []
    if isinstance(value, bool):
        return []
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        return [i for item in value for i in _indices(item)]
    return [int(match) for match in re.findall(r"(?<!\d)-?\d+", str(value))]


def _unique(indices: Sequence[int]) -> tuple[int, ...]:
    return tuple(dict.fromkeys(indices))


def _strip_theme_prefix(name: str) -> str:
    return _THEME_PREFIX.sub("", name).strip()


def _is_name_keyed(value: Any) -> bool:
    return (
        isinstance(value, dict)
        and bool(value)
        and all(isinstance(v, dict) for v in value.values())
    )


def _themes_from_json(
    document: Any, key_map: Mapping[str, str] | None
) -> list[Theme] | None:
    keys = {canonical: key for key, canonical in (key_map or {}).items()}
    container_keys = (
        (keys["container"], *_CONTAINER_KEYS)
        if "container" in keys
        else _CONTAINER_KEYS
    )
    name_keys = (keys["name"], *_NAME_KEYS) if "name" in keys else _NAME_KEYS

    if isinstance(document, dict):
        entries = _lookup_any(document, container_keys)
        if entries is None:
            lists = [v for v in document.values() if isinstance(v, list)]
            if len(lists) == 1:
                entries = lists[0]
            elif not lists and _is_name_keyed(document):
                entries = document
    else:
        entries = document

    # {"Tema 1: Resilienza": {"descrizione": ..., "categorie": [...]}}
    if _is_name_keyed(entries):
        entries = [
            entry
            if _lookup_any(entry, name_keys)
            else {**entry, name_keys[0]: key}
            for key, entry in entries.items()
        ]

    if not isinstance(entries, list):
        return None

    description_keys = (
        (keys["description"], *_DESCRIPTION_KEYS)
        if "description" in keys
        else _DESCRIPTION_KEYS
    )
    codes_keys = (keys["codes"], *_CODES_KEYS) if "codes" in keys else _CODES_KEYS

    themes = []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict):
            logger.warning("Skipping theme entry %d: not an object", position)
            continue
        name = _strip_theme_prefix(str(_lookup_any(entry, name_keys) or ""))
        if not name:
            logger.warning("Skipping theme entry %d: no name", position)
            continue
        themes.append(
            Theme(
                name=name,
                description=str(
                    _lookup_any(entry, description_keys) or ""
                ).strip(),
                code_indices=_unique(
                    _indices(_lookup_any(entry, codes_keys))
                ),
            )
        )
    return themes or None


def _themes_from_text(raw: str) -> list[Theme]:
    themes = []
    current: dict[str, Any] | None = None

    def close() -> None:
        if current is not None and current["name"]:
            themes.append(
                Theme(
                    name=current["name"],
                    description=" ".join(current["description"]).strip(),
                    code_indices=_unique(current["indices"]),
                )
            )

    for line in raw.splitlines():
        header = _HEADER_LINE.match(line)
        if header:
            close()
            current = {
                "name": header.group(2).strip(),
                "description": [],
                "indices": [],
            }
            continue

        if current is None or not line.strip():
            continue

        index_line = _INDEX_LINE.match(line)
        if index_line:
            current["indices"].extend(_indices(index_line.group(1)))
        else:
            current["description"].append(
                _DESCRIPTION_LABEL.sub("", line).strip()
            )

    close()
    return themes


def parse_theme_response(
    raw: str, key_map: Mapping[str, str] | None = None
) -> list[Theme]:
    """
    Parse themes from a theming response

    JSON is used when present. Otherwise "Tema N: <name>" headers are read
    line by line with the following paragraph as description and a
    "Categorie: 1, 5, 12" line as code indices.
    """
    if not raw or not raw.strip():
        raise ThemeParseError("empty response", raw=raw)

    try:
        themes = _themes_from_json(extract_json(raw), key_map)
    except ParseError:
        themes = None

    if themes is None:
        themes = _themes_from_text(raw)

    if not themes:
        raise ThemeParseError("no recognizable theme header", raw=raw)
    return themes


def validate_themes(
    themes: Sequence[Theme], codebook_size: int
) -> tuple[list[Theme], list[str]]:
    """
    Drop code indices outside the codebook and themes left without codes
    """
    valid: list[Theme] = []
    warnings: list[str] = []
    for theme in themes:
        bad = [i for i in theme.code_indices if not 0 <= i < codebook_size]
        if bad:
            message = (
                f"theme '{theme.name}' cites unknown code indices "
                f"{', '.join(str(i) for i in bad)}; dropped"
            )
            logger.warning(message)
            warnings.append(message)

        indices = tuple(i for i in theme.code_indices if 0 <= i < codebook_size)
        if not indices:
            message = f"theme '{theme.name}' has no valid code indices; dropped"
            logger.warning(message)
            warnings.append(message)
            continue

        words = word_count(theme.description)
        if words > THEME_DESCRIPTION_WORD_LIMIT:
            logger.warning(
                "Theme '%s' has a %d word description", theme.name, words
            )

        valid.append(
            Theme(
                name=theme.name,
                description=theme.description,
                code_indices=indices,
            )
        )
    return valid, warnings


def render_theming_prompt(
    codebook: Codebook, template: PromptTemplate, min_themes: int
) -> str:
    if template.phase is not PromptPhase.THEMING:
        raise TemplateError(
            f"Template {template.name} is not a theming template"
        )
    return render(
        template,
        {
            "codes_list": format_code_list(codebook.codes),
            "min_themes": str(min_themes),
        },
    )


def _check_temperature(temperature: float) -> None:
    if not 0.0 <= temperature <= MAX_TEMPERATURE:
        raise ConfigError(
            f"Temperature {temperature} is not within [0, {MAX_TEMPERATURE:g}]"
        )


async def generate_themes(
    codebook: Codebook,
    template: PromptTemplate,
    provider: ChatProvider,
    temperature: float,
    min_themes: int,
    *,
    model: str,
    run_id: str = "",
    max_output_tokens: int | None = None,
    archive: ResponseArchiver | None = None,
    usage: list[TokenUsage] | None = None,
) -> ThemeSet:
    """
    Generate themes from the full codebook at one temperature
    """
    if not codebook.codes:
        raise ConfigError("Can't generate themes from an empty codebook")
    _check_temperature(temperature)

    request_args: dict[str, Any] = {}
    if max_output_tokens is not None:
        request_args["max_output_tokens"] = max_output_tokens

    response = await provider.chat(
        ChatRequest(
            model=model,
            prompt=render_theming_prompt(codebook, template, min_themes),
            temperature=temperature,
            seed_tag=f"{run_id}/themes/T{temperature:g}",
            **request_args,
        )
    )
    raw_path = archive(temperature, response.text) if archive else None
    if usage is not None:
        usage.append(response.usage)

    themes, warnings = validate_themes(
        parse_theme_response(response.text, template.output_key_map),
        len(codebook.codes),
    )
    if response.truncated:
        warnings.append("response truncated at the output token limit")

    theme_set = ThemeSet(
        run_id=run_id,
        temperature=temperature,
        min_themes=min_themes,
        themes=themes,
        raw_response_path=None if raw_path is None else str(raw_path),
        model=response.model,
        warnings=warnings,
    )
    if theme_set.below_minimum:
        message = (
            f"below minimum: {len(themes)} themes at T={temperature:g}, "
            f"requested at least {min_themes}"
        )
        logger.warning(message)
        theme_set.warnings.append(message)
    return theme_set


async def sweep_temperatures(
    codebook: Codebook,
    template: PromptTemplate,
    provider: ChatProvider,
    temperatures: Sequence[float],
    min_themes: int,
    *,
    model: str,
    run_id: str = "",
    max_output_tokens: int | None = None,
    archive: ResponseArchiver | None = None,
) -> SweepResult:
    """
    Generate one theme set per temperature

    Runs are independent requests and execute concurrently. A failing run
    is recorded and does not abort the sweep.
    """
    if not temperatures:
        raise ConfigError("A temperature sweep needs at least one temperature")
    for temperature in temperatures:
        _check_temperature(temperature)

    usage: list[TokenUsage] = []
    results = await asyncio.gather(
        *(
            generate_themes(
                codebook,
                template,
                provider,
                temperature,
                min_themes,
                model=model,
                run_id=run_id,
                max_output_tokens=max_output_tokens,
                archive=archive,
                usage=usage,
            )
            for temperature in temperatures
        ),
        return_exceptions=True,
    )

    theme_sets: list[ThemeSet] = []
    failures: list[SweepFailure] = []
    for temperature, result in zip(temperatures, results):
        if isinstance(result, (ProviderError, ParseError)):
            logger.warning(
                "Theme generation at T=%g failed: %s", temperature, result
            )
            failures.append(
                SweepFailure(temperature, str(result), result.exit_code)
            )
        elif isinstance(result, BaseException):
            raise result
        else:
            theme_sets.append(result)

    return SweepResult(
        theme_sets=theme_sets,
        failures=failures,
        token_usage=TokenUsage.total(usage),
    )


async def stability(
    theme_sets: Sequence[ThemeSet],
    embed_provider: EmbeddingProvider,
    threshold: float = DEFAULT_STABILITY_THRESHOLD,
) -> StabilityReport:
    """
    Match recurring themes across runs

    Runs are visited by ascending temperature. The themes of each run are
    matched greedily, best score first, to the groups built so far. The
    score of a theme for a group is its best cosine similarity to any group
    member. A group takes at most one theme per run and only scores at or
    above the threshold count. Groups with a single member are singletons.
    """
    if len(theme_sets) < 2:
        raise EvaluationError("Stability needs at least two theme sets")
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"Threshold {threshold} is not within (0, 1]")

    runs = sorted(theme_sets, key=lambda s: s.temperature)
    members = [
        (run_index, ClusterMember(s.run_id, s.temperature, theme.name))
        for run_index, s in enumerate(runs)
        for theme in s.themes
    ]
    texts = [theme.text for s in runs for theme in s.themes]
    vectors = await embed_provider.embed(texts) if texts else []

    def score(a: int, b: int) -> float:
        return cosine(vectors[a], vectors[b])

    groups: list[list[int]] = []
    for run_index in range(len(runs)):
        candidates = [
            i for i, (r, _) in enumerate(members) if r == run_index
        ]
        cells = []
        for i in candidates:
            for g, group in enumerate(groups):
                best = max(score(i, j) for j in group)
                if best >= threshold - _SCORE_TOLERANCE:
                    cells.append((best, i, g))

        cells.sort(key=lambda cell: (-cell[0], cell[1], cell[2]))
        used_members: set[int] = set()
        used_groups: set[int] = set()
        for _, i, g in cells:
            if i in used_members or g in used_groups:
                continue
            groups[g].append(i)
            used_members.add(i)
            used_groups.add(g)

        groups.extend([i] for i in candidates if i not in used_members)

    clusters = []
    singletons = []
    for group in groups:
        if len(group) == 1:
            singletons.append(members[group[0]][1])
            continue
        group_members = [members[i][1] for i in group]
        clusters.append(
            ThemeCluster(
                name=group_members[0].theme,
                members=group_members,
                similarities=[
                    PairScore(
                        members[a][1].label,
                        members[b][1].label,
                        round(score(a, b), 6),
                    )
                    for pos, a in enumerate(group)
                    for b in group[pos + 1 :]
                ],
            )
        )

    return StabilityReport(
        runs=[(s.run_id, s.temperature) for s in runs],
        clusters=clusters,
        singletons=singletons,
        match_threshold=threshold,
        embedder_id=embed_provider.name,
    )


def theme_set_to_dict(theme_set: ThemeSet) -> dict[str, Any]:
    data = asdict(theme_set)
    for theme in data["themes"]:
        theme["code_indices"] = list(theme["code_indices"])
    return data


def theme_set_from_dict(data: Mapping[str, Any]) -> ThemeSet:
    try:
        return ThemeSet(
            run_id=data["run_id"],
            temperature=float(data["temperature"]),
            min_themes=int(data["min_themes"]),
            themes=[
                Theme(
                    name=theme["name"],
                    description=theme["description"],
                    code_indices=tuple(int(i) for i in theme["code_indices"]),
                )
                for theme in data["themes"]
            ],
            raw_response_path=data.get("raw_response_path"),
            model=data.get("model", ""),
            warnings=list(data.get("warnings", [])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ThemeParseError(f"Invalid theme set document: {e}") from e


def theme_set_to_json(theme_set: ThemeSet, path: str | Path) -> Path:
    return atomic_write_text(
        path,
        json.dumps(theme_set_to_dict(theme_set), ensure_ascii=False, indent=2)
        + "\n",
    )


def theme_set_from_json(path: str | Path) -> ThemeSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ThemeParseError(f"Can't read theme set {path}: {e}") from e
    except ValueError as e:
        raise ThemeParseError(f"{path} is not valid JSON: {e}") from e
    return theme_set_from_dict(data)


def stability_to_dict(report: StabilityReport) -> dict[str, Any]:
    return {
        "match_threshold": report.match_threshold,
        "embedder_id": report.embedder_id,
        "runs": [
            {"run_id": run_id, "temperature": temperature}
            for run_id, temperature in report.runs
        ],
        "clusters": [asdict(cluster) for cluster in report.clusters],
        "singletons": [asdict(member) for member in report.singletons],
    }
