# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

"""
Synthetic interview corpus and canned model responses for offline tests

19 Italian transcripts about remote work with 9 to 11 codes each, 185 codes
in total. Theme responses are built from the global code indices.
"""

import json
from collections.abc import Sequence
from pathlib import Path

from thema.coding import Codebook, InitialCode, aggregate_codebook

TRANSCRIPT_IDS = tuple(f"int{n:02d}" for n in range(1, 20))
CODE_COUNTS = (
    10, 9, 11, 10, 9, 10, 9, 11, 10, 9, 10, 9, 10, 9, 11, 9, 10, 9, 10,
)
TOTAL_CODES = sum(CODE_COUNTS)

CODE_NAMES = (
    "Flessibilità oraria",
    "Isolamento sociale",
    "Confini tra casa e lavoro",
    "Strumenti digitali",
    "Fiducia del responsabile",
    "Risparmio di tempo",
    "Stanchezza da videochiamate",
    "Spazio domestico",
    "Autonomia decisionale",
    "Comunicazione asincrona",
    "Cura dei figli",
    "Senso di appartenenza",
    "Produttività percepita",
    "Pause e riposo",
    "Formazione a distanza",
    "Connessione internet",
    "Controllo delle prestazioni",
    "Riunioni frequenti",
    "Costi domestici",
    "Mancanza del caffè in ufficio",
    "Motivazione personale",
    "Ritmi familiari",
    "Carriera e visibilità",
    "Benessere fisico",
    "Sovraccarico informativo",
    "Rapporto con i colleghi",
    "Scelta del luogo di vita",
    "Abitudini mattutine",
    "Disconnessione serale",
    "Supporto tecnico",
    "Nuovi assunti",
    "Lavoro ibrido",
    "Ansia da reperibilità",
    "Organizzazione della giornata",
    "Ambiente silenzioso",
    "Mobilità e traffico",
    "Cultura aziendale",
    "Sicurezza informatica",
    "Tempo per sé",
    "Riconoscimento del lavoro",
)

THEMING_MARKER = "Analisi Tematica:"
ENGLISH_CODING_MARKER = "Can you assist me"

# name, description
THEMES_T0 = (
    (
        "Equilibrio tra vita e lavoro",
        "Gli intervistati raccontano come il lavoro da remoto sposti il "
        "confine tra tempo professionale e tempo privato.",
    ),
    (
        "Relazioni a distanza",
        "Il contatto con i colleghi si riduce e cambia forma, tra "
        "isolamento e nuove abitudini di comunicazione.",
    ),
    (
        "Tecnologia come infrastruttura",
        "Strumenti digitali, connessione e supporto tecnico diventano "
        "condizioni necessarie per lavorare.",
    ),
    (
        "Autonomia e fiducia",
        "La libertà di organizzarsi dipende dalla fiducia dei responsabili "
        "e dal modo in cui vengono controllate le prestazioni.",
    ),
    (
        "Spazi domestici",
        "La casa diventa ufficio e richiede adattamenti di spazio, silenzio "
        "e costi.",
    ),
    (
        "Salute e benessere",
        "Stanchezza, pause e attività fisica accompagnano la nuova routine "
        "lavorativa.",
    ),
    (
        "Famiglia e cura",
        "Figli e ritmi familiari si intrecciano con gli orari di lavoro.",
    ),
    (
        "Carriera e riconoscimento",
        "Chi lavora da casa teme di perdere visibilità e occasioni di "
        "crescita.",
    ),
    (
        "Cultura organizzativa",
        "Le aziende rinegoziano regole, riunioni e senso di appartenenza.",
    ),
)

# recurring in every sweep run
SWEEP_RECURRING = THEMES_T0[:7]

SWEEP_SINGLETONS = {
    0.25: (
        (
            "Pendolarismo evitato",
            "Traffico risparmiato significa mattine lente senza treni.",
        ),
        (
            "Sicurezza informatica",
            "Password robuste, VPN aziendali, phishing domestico.",
        ),
    ),
    0.5: (
        (
            "Nuovi assunti",
            "Inserimento complicato quando manca affiancamento fisico.",
        ),
        (
            "Mancanza del caffè",
            "Chiacchiere spontanee accanto alla macchinetta scompaiono.",
        ),
    ),
    0.75: (
        (
            "Scelta del luogo",
            "Trasferirsi lontano dalla città diventa possibile.",
        ),
        (
            "Sovraccarico informativo",
            "Notifiche continue, messaggi, email riempiono ogni ora.",
        ),
        (
            "Disconnessione serale",
            "Spegnere computer dopo cena resta difficile.",
        ),
    ),
}

SWEEP_TEMPERATURES = (0.25, 0.5, 0.75)

REFERENCE_CATEGORIES = (
    ("R1", "Equilibrio vita lavoro", "Confine tra tempo privato e lavoro"),
    ("R2", "Relazioni con i colleghi", "Isolamento e comunicazione"),
    ("R3", "Tecnologia", "Strumenti digitali e connessione"),
    ("R4", "Fiducia e autonomia", "Controllo e libertà organizzativa"),
    ("R5", "Spazi della casa", "Casa come ufficio"),
    ("R6", "Benessere", "Salute fisica e stanchezza"),
    ("R7", "Identità professionale", "Ruolo e prospettive future"),
)


def code_name(transcript_number: int, position: int) -> str:
    return CODE_NAMES[(transcript_number * 4 + position) % len(CODE_NAMES)]


def code_entry(transcript_number: int, position: int) -> tuple[str, str, str]:
    name = code_name(transcript_number, position)
    description = (
        f"L'intervistato descrive {name.lower()} nella propria esperienza "
        "di lavoro da remoto."
    )
    quote = (
        f"Quando penso a {name.lower()} mi viene in mente la situazione "
        f"numero {position + 1} che ho vissuto."
    )
    return name, description, quote


def transcript_text(transcript_id: str) -> str:
    number = TRANSCRIPT_IDS.index(transcript_id)
    lines = [f"Intervista {transcript_id} - lavoro da remoto", ""]
    for position in range(CODE_COUNTS[number]):
        name, _, quote = code_entry(number, position)
        lines.append(f"Intervistatore: Mi parli di {name.lower()}?")
        lines.append(f"Intervistato: {quote}")
    return "\n".join(lines) + "\n"


def coding_response(transcript_id: str) -> str:
    number = TRANSCRIPT_IDS.index(transcript_id)
    entries = []
    for position in range(CODE_COUNTS[number]):
        name, description, quote = code_entry(number, position)
        entries.append(
            {"nome": name, "descrizione": description, "citazione": quote}
        )
    document = json.dumps({"Categorie": entries}, ensure_ascii=False, indent=2)
    return f"Ecco le categorie iniziali:\n```json\n{document}\n```\n"


def english_coding_response(transcript_id: str, count: int = 8) -> str:
    number = TRANSCRIPT_IDS.index(transcript_id)
    entries = []
    for position in range(count):
        name, description, quote = code_entry(number, position)
        entries.append(
            {"name": name, "description": description, "quote": quote}
        )
    return json.dumps({"Codes": entries}, ensure_ascii=False)


def theme_response(
    themes: Sequence[tuple[str, str]], codebook_size: int = TOTAL_CODES
) -> str:
    entries = [
        {
            "nome": name,
            "descrizione": description,
            "categorie": [
                index
                for index in range(codebook_size)
                if index % len(themes) == position
            ],
        }
        for position, (name, description) in enumerate(themes)
    ]
    return json.dumps({"temi": entries}, ensure_ascii=False, indent=2)


def sweep_themes(temperature: float) -> tuple[tuple[str, str], ...]:
    return SWEEP_RECURRING + SWEEP_SINGLETONS[temperature]


def make_codebook(
    counts: Sequence[int] = CODE_COUNTS,
    *,
    names: Sequence[str] | None = None,
) -> Codebook:
    """
    Build a codebook without a provider

    With names given, a single transcript holds one code per name.
    """
    if names is not None:
        return aggregate_codebook(
            {
                "int01": [
                    InitialCode(
                        index=position,
                        name=name,
                        description=f"Descrizione di {name}",
                        quote=f"Citazione su {name}",
                        transcript_id="int01",
                    )
                    for position, name in enumerate(names)
                ]
            }
        )

    per_transcript = {}
    for number, count in enumerate(counts):
        transcript_id = TRANSCRIPT_IDS[number]
        per_transcript[transcript_id] = [
            InitialCode(
                index=position,
                name=name,
                description=description,
                quote=quote,
                transcript_id=transcript_id,
            )
            for position, (name, description, quote) in enumerate(
                code_entry(number, p) for p in range(count)
            )
        ]
    return aggregate_codebook(per_transcript)


def write_corpus(
    directory: Path, transcript_ids: Sequence[str] = TRANSCRIPT_IDS
) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for transcript_id in transcript_ids:
        (directory / f"{transcript_id}.txt").write_text(
            transcript_text(transcript_id), encoding="utf-8"
        )
    return directory


def write_reference(path: Path) -> Path:
    lines = ["id,label,detail"]
    lines.extend(",".join(category) for category in REFERENCE_CATEGORIES)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _toml_string(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def write_fixtures(
    directory: Path,
    *,
    transcript_ids: Sequence[str] = TRANSCRIPT_IDS,
    codebook_size: int = TOTAL_CODES,
) -> Path:
    """
    Write fixtures.toml and the response files for the mock chat provider
    """
    directory.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, float | None, str]] = []

    entries.append(
        (
            THEMING_MARKER,
            0.0,
            _write(
                directory,
                "themes_T0.json",
                theme_response(THEMES_T0, codebook_size),
            ),
        )
    )
    for temperature in SWEEP_TEMPERATURES:
        entries.append(
            (
                THEMING_MARKER,
                temperature,
                _write(
                    directory,
                    f"themes_T{temperature:g}.json",
                    theme_response(sweep_themes(temperature), codebook_size),
                ),
            )
        )
    entries.append(
        (
            ENGLISH_CODING_MARKER,
            None,
            _write(directory, "english.json", english_coding_response("int01")),
        )
    )
    for transcript_id in transcript_ids:
        entries.append(
            (
                f"Intervista {transcript_id} ",
                None,
                _write(
                    directory,
                    f"{transcript_id}.json",
                    coding_response(transcript_id),
                ),
            )
        )

    lines = []
    for match, temperature, response_file in entries:
        lines.append("[[chat]]")
        lines.append(f"match = {_toml_string(match)}")
        if temperature is not None:
            lines.append(f"temperature = {temperature}")
        lines.append(f"response-file = {_toml_string(response_file)}")
        lines.append("")

    (directory / "fixtures.toml").write_text("\n".join(lines), encoding="utf-8")
    return directory


def _write(directory: Path, name: str, content: str) -> str:
    (directory / name).write_text(content, encoding="utf-8")
    return name
