# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Language parameterized prompt templates for initial coding and theming

A template file is UTF-8 text with a small front matter block::

    phase: coding
    language: it
    keys: Categorie=container, nome=name, descrizione=description, citazione=quote
    ---
    <body with {testo}>
"""

import logging
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

from thema.errors import TemplateError
from thema.helper import fingerprint

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"
DEFAULT_MIN_THEMES = 9

PLACEHOLDER_PATTERN = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
CODE_LIST_SEPARATOR = ", "


class PromptPhase(Enum):
    CODING = "coding"
    THEMING = "theming"


REQUIRED_PLACEHOLDERS = {
    PromptPhase.CODING: frozenset({"testo"}),
    PromptPhase.THEMING: frozenset({"codes_list", "min_themes"}),
}

CANONICAL_FIELDS = {
    PromptPhase.CODING: frozenset(
        {"container", "name", "description", "quote"}
    ),
    PromptPhase.THEMING: frozenset(
        {"container", "name", "description", "codes"}
    ),
}


class NamedCode(Protocol):
    index: int
    name: str
    description: str
    quote: str


@dataclass(frozen=True)
class PromptTemplate:
    """
    A prompt body with named placeholders

    Args:
        phase: coding or theming
        language: Language tag of the prompt text
        body: Template text. Placeholders are written as {name}.
        output_key_map: Maps the JSON keys the prompt asks for to the
            canonical fields container, name, description and quote (coding)
            or codes (theming).
        name: Human readable identifier, e.g. "builtin:it" or a file path
    """

    phase: PromptPhase
    language: str
    body: str
    output_key_map: Mapping[str, str] = field(compare=False)
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        validate_template(self)

    @property
    def placeholders(self) -> list[str]:
        return PLACEHOLDER_PATTERN.findall(self.body)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.body)

    def key_for(self, canonical: str) -> str:
        """
        Return the JSON key the template uses for a canonical field
        """
        for key, value in self.output_key_map.items():
            if value == canonical:
                return key
        raise TemplateError(
            f"Template {self.name} has no key for field {canonical}"
        )


def validate_template(template: PromptTemplate) -> None:
    placeholders = template.placeholders
    required = REQUIRED_PLACEHOLDERS[template.phase]

    missing = required.difference(placeholders)
    if missing:
        raise TemplateError(
            f"{template.phase.value} template {template.name} lacks the "
            f"placeholders {', '.join(sorted(missing))}"
        )

    if template.phase is PromptPhase.CODING and placeholders.count(
        "testo"
    ) != 1:
        raise TemplateError(
            f"coding template {template.name} must contain exactly one "
            "{testo} placeholder"
        )

    uncovered = CANONICAL_FIELDS[template.phase].difference(
        template.output_key_map.values()
    )
    if uncovered:
        raise TemplateError(
            f"Key map of template {template.name} does not cover "
            f"{', '.join(sorted(uncovered))}"
        )


ITALIAN_CODING_BODY = """Puoi assistermi nella generazione di una vasta gamma di categorie iniziali
(genera tutte le categorie che ritieni indispensabili per catturare
a pieno il significato esplicito o latente, o gli eventi nel testo,
concentrati sull'intervistato e non sull'intervistatore che fa le domande),
L'obiettivo e' quello di raccogliere un ampio spettro di argomenti,
azioni e idee presenti nel testo qui sotto, per aiutarmi nella conduzione
di un'analisi tematica.

Fornisci un nome per ciascuna categoria, con una descrizione densa di
massimo 25 parole e una citazione dell'intervistato per ogni categoria di
massimo 100 parole.

Formatta la risposta come un file json mantenendo nomi, descrizioni e
citazioni insieme nell'oggetto 'Categorie'.

```{testo}```
"""

ITALIAN_THEMING_BODY = """Leggi prima l'elenco delle categorie iniziali della mia
Analisi Tematica: {codes_list}.
Le categorie iniziali sono nel seguente formato:
[indice]: nome_codice. descrizione_codice. citazione

Determina tutti i possibili temi (almeno {min_themes}) ordinando, confrontando e
raggruppando le categorie iniziali.

Fornisci un numero adeguato di temi insieme a un nome, una
descrizione densa (120 parole) e l'elenco delle categorie (indice) per ciascun tema.
Assicurati che i temi catturino la ricchezza e la diversità dei codici iniziali.

Formatta la risposta come un file json con l'oggetto 'temi': un elenco in cui
ogni tema ha i campi 'nome', 'descrizione' e 'categorie' (l'elenco degli
indici numerici delle categorie iniziali).
"""

ENGLISH_CODING_BODY = """Can you assist me in generating a broad range of initial codes
(generate all the codes you consider necessary to fully capture
the explicit or latent meaning, or the events in the text,
focus on the interviewee and not on the interviewer asking the questions).
The aim is to gather a wide spectrum of topics, actions and ideas present
in the text below, to help me conduct a thematic analysis.

Provide a name for each code, with a dense description of at most
25 words and a quote from the interviewee for each code of at most
100 words. Write the names and descriptions in the original language
of the interview data.

Format the response as a json file keeping names, descriptions and
quotes together in the object 'Codes'.

```{testo}```
"""

ENGLISH_THEMING_BODY = """First read the list of initial codes of my
Thematic Analysis: {codes_list}.
The initial codes are in the following format:
[index]: code_name. code_description. quote

Determine all the possible themes (at least {min_themes}) by sorting, comparing and
grouping the initial codes.

Provide an adequate number of themes together with a name, a
dense description (120 words) and the list of codes (index) for each theme.
Make sure the themes capture the richness and diversity of the initial codes.

Format the response as a json file with the object 'themes': a list where
each theme has the fields 'name', 'description' and 'codes' (the list of
numeric indices of the initial codes).
"""


def builtin_templates() -> list[PromptTemplate]:
    """
    Return the templates shipped with thema

    Italian and English variants for both phases. The English coding
    template asks for codes in the original language of the interviews.
    """
    return [
        PromptTemplate(
            phase=PromptPhase.CODING,
            language="it",
            body=ITALIAN_CODING_BODY,
            output_key_map={
                "Categorie": "container",
                "nome": "name",
                "descrizione": "description",
                "citazione": "quote",
            },
            name=f"{BUILTIN_PREFIX}it",
        ),
        PromptTemplate(
            phase=PromptPhase.THEMING,
            language="it",
            body=ITALIAN_THEMING_BODY,
            output_key_map={
                "temi": "container",
                "nome": "name",
                "descrizione": "description",
                "categorie": "codes",
            },
            name=f"{BUILTIN_PREFIX}it",
        ),
        PromptTemplate(
            phase=PromptPhase.CODING,
            language="en",
            body=ENGLISH_CODING_BODY,
            output_key_map={
                "Codes": "container",
                "name": "name",
                "description": "description",
                "quote": "quote",
            },
            name=f"{BUILTIN_PREFIX}en",
        ),
        PromptTemplate(
            phase=PromptPhase.THEMING,
            language="en",
            body=ENGLISH_THEMING_BODY,
            output_key_map={
                "themes": "container",
                "name": "name",
                "description": "description",
                "codes": "codes",
            },
            name=f"{BUILTIN_PREFIX}en",
        ),
    ]


def builtin_template(phase: PromptPhase, language: str) -> PromptTemplate:
    for template in builtin_templates():
        if template.phase is phase and template.language == language:
            return template

    raise TemplateError(
        f"No builtin {phase.value} template for language '{language}'"
    )


def parse_template(content: str, *, name: str = "") -> PromptTemplate:
    """
    Parse a template from its front matter and body
    """
    head, separator, body = content.partition("\n---\n")
    if not separator:
        raise TemplateError(
            f"Template {name} has no '---' line separating front matter and "
            "body"
        )

    values: dict[str, str] = {}
    for line in head.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, colon, value = line.partition(":")
        if not colon:
            raise TemplateError(
                f"Invalid front matter line in template {name}: {line!r}"
            )
        values[key.strip()] = value.strip()

    for required in ("phase", "language", "keys"):
        if required not in values:
            raise TemplateError(
                f"Front matter of template {name} lacks '{required}'"
            )

    try:
        phase = PromptPhase(values["phase"])
    except ValueError:
        raise TemplateError(
            f"Unknown phase '{values['phase']}' in template {name}"
        ) from None

    key_map: dict[str, str] = {}
    for item in values["keys"].split(","):
        json_key, equals, canonical = item.partition("=")
        if not equals:
            raise TemplateError(
                f"Invalid keys entry {item.strip()!r} in template {name}. "
                "Use json_key=canonical_field."
            )
        key_map[json_key.strip()] = canonical.strip()

    return PromptTemplate(
        phase=phase,
        language=values["language"],
        body=body,
        output_key_map=key_map,
        name=name,
    )


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    try:
        content = path.read_text(encoding="utf-8")
    except OSError as e:
        raise TemplateError(f"Can't read template {path}: {e}") from e

    return parse_template(content, name=str(path))


def resolve_template(
    selector: str, phase: PromptPhase, language: str
) -> PromptTemplate:
    """
    Resolve a template selector

    Args:
        selector: "builtin" (language of the run), "builtin:<lang>" or a path
            to a template file
        phase: Expected phase of the template
        language: Language of the run, used for a bare "builtin"
    """
    if selector == "builtin":
        template = builtin_template(phase, language)
    elif selector.startswith(BUILTIN_PREFIX):
        template = builtin_template(phase, selector[len(BUILTIN_PREFIX) :])
    else:
        template = load_template(selector)

    if template.phase is not phase:
        raise TemplateError(
            f"Template {template.name} is a {template.phase.value} template "
            f"but a {phase.value} template is required"
        )
    return template


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """
    Substitute all placeholders of a template

    Raises a TemplateError naming the first placeholder without binding.
    Bindings without placeholder are ignored with a warning.
    """
    placeholders = set(template.placeholders)
    for unknown in sorted(set(bindings).difference(placeholders)):
        logger.warning(
            "Ignoring binding '%s' unknown to template %s",
            unknown,
            template.name,
        )

    def substitute(match: re.Match[str]) -> str:
        key = match.group(1)
        try:
            return str(bindings[key])
        except KeyError:
            raise TemplateError(
                f"Missing binding for placeholder {{{key}}} of template "
                f"{template.name}"
            ) from None

    # single pass so that substituted text is never scanned again
    return PLACEHOLDER_PATTERN.sub(substitute, template.body)


def format_code(code: NamedCode) -> str:
    return f"[{code.index}]: {code.name}. {code.description}. {code.quote}"


def format_code_list(codes: Sequence[NamedCode]) -> str:
    """
    Format codes as "[i]: name. description. quote" entries joined by ", "

    Dots inside names, descriptions or quotes are not escaped.
    """
    if not codes:
        raise TemplateError("Can't format an empty code list")

    for position, code in enumerate(codes):
        if code.index != position:
            raise TemplateError(
                f"Code indices must be contiguous from 0. Found {code.index} "
                f"at position {position}."
            )

    return CODE_LIST_SEPARATOR.join(format_code(code) for code in codes)
