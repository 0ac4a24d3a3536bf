# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import json
import unittest
from pathlib import Path

from pontos.testing import temp_directory

from tests.fixtures import (
    SWEEP_RECURRING,
    SWEEP_SINGLETONS,
    SWEEP_TEMPERATURES,
    THEMES_T0,
    THEMING_MARKER,
    TOTAL_CODES,
    make_codebook,
    sweep_themes,
    theme_response,
)
from thema.errors import (
    ConfigError,
    EvaluationError,
    TemplateError,
    ThemeParseError,
)
from thema.evaluation import cosine
from thema.gateway import (
    FixtureMatcher,
    MockEmbeddingProvider,
    mock_chat_provider,
)
from thema.prompting import PromptPhase, builtin_template
from thema.theming import (
    Theme,
    ThemeSet,
    generate_themes,
    parse_theme_response,
    render_theming_prompt,
    stability,
    stability_to_dict,
    sweep_temperatures,
    theme_set_from_json,
    theme_set_to_json,
    validate_themes,
)

THEMING_KEYS = builtin_template(PromptPhase.THEMING, "it").output_key_map

TEXT_RESPONSE = """Ecco i temi individuati.

**Tema 1: Equilibrio tra vita e lavoro**
Descrizione: Il confine tra tempo privato e professionale si sposta.
Categorie: 0, 3, 17

Tema 2 - Relazioni a distanza
I contatti con i colleghi diventano rari.
Codici iniziali: [4], [9], [12]
"""


def sweep_provider(failing: float | None = None):
    fixtures = {
        FixtureMatcher(THEMING_MARKER, temperature): (
            "Mi dispiace." if temperature == failing
            else theme_response(sweep_themes(temperature))
        )
        for temperature in SWEEP_TEMPERATURES
    }
    return mock_chat_provider(fixtures)


def theme_set(temperature: float, themes, run_id: str = "run-1") -> ThemeSet:
    return ThemeSet(
        run_id=run_id,
        temperature=temperature,
        min_themes=9,
        themes=[
            Theme(name=name, description=description, code_indices=(0,))
            for name, description in themes
        ],
    )


class ThemeTestCase(unittest.TestCase):
    def test_text(self):
        theme = Theme("Benessere", "Salute e pause.", (1, 2))

        self.assertEqual(theme.text, "Benessere: Salute e pause.")
        self.assertEqual(Theme("Benessere", "", (1,)).text, "Benessere")

    def test_invalid(self):
        with self.assertRaisesRegex(ThemeParseError, "theme without name"):
            Theme(" ", "x", (1,))

        with self.assertRaisesRegex(ThemeParseError, "lists a code index twice"):
            Theme("a", "x", (1, 1))


class ParseThemeResponseTestCase(unittest.TestCase):
    def test_json(self):
        themes = parse_theme_response(theme_response(THEMES_T0), THEMING_KEYS)

        self.assertEqual(len(themes), 9)
        self.assertEqual(themes[0].name, "Equilibrio tra vita e lavoro")
        self.assertEqual(themes[0].code_indices[:3], (0, 9, 18))
        self.assertEqual(
            sum(len(t.code_indices) for t in themes), TOTAL_CODES
        )

    def test_json_aliases_and_prefix(self):
        raw = json.dumps(
            {
                "themes": [
                    {
                        "Theme": "Tema 1: Spazi domestici",
                        "Description": "La casa diventa ufficio.",
                        "codes": "[1], [4], 7",
                    }
                ]
            }
        )

        themes = parse_theme_response(raw)

        self.assertEqual(
            themes,
            [Theme("Spazi domestici", "La casa diventa ufficio.", (1, 4, 7))],
        )

    def test_json_single_list_without_known_container(self):
        raw = json.dumps(
            {"risultato": [{"nome": "Benessere", "categorie": [2, 2, 3]}]}
        )

        themes = parse_theme_response(raw, THEMING_KEYS)

        self.assertEqual(themes[0].code_indices, (2, 3))
        self.assertEqual(themes[0].description, "")

    def test_json_themes_keyed_by_name(self):
        entries = {
            "Tema 1: Resilienza": {
                "descrizione": "Adattarsi ai cambiamenti.",
                "categorie": [0, 3],
            },
            "Tema 2: Isolamento": {
                "nome": "Solitudine",
                "categorie": "5, 6",
            },
        }
        expected = [
            Theme("Resilienza", "Adattarsi ai cambiamenti.", (0, 3)),
            Theme("Solitudine", "", (5, 6)),
        ]

        for document in ({"temi": entries}, entries):
            with self.subTest(document=list(document)):
                themes = parse_theme_response(
                    json.dumps(document), THEMING_KEYS
                )

                self.assertEqual(themes, expected)

    def test_negative_and_range_indices(self):
        raw = json.dumps(
            {"temi": [{"nome": "Benessere", "categorie": "-1, 4-6, [7]"}]}
        )

        themes = parse_theme_response(raw, THEMING_KEYS)

        self.assertEqual(themes[0].code_indices, (-1, 4, 6, 7))

        with self.assertLogs("thema.theming", level="WARNING"):
            valid, warnings = validate_themes(themes, 10)

        self.assertEqual(valid, [Theme("Benessere", "", (4, 6, 7))])
        self.assertEqual(
            warnings,
            ["theme 'Benessere' cites unknown code indices -1; dropped"],
        )

    def test_text_headers(self):
        themes = parse_theme_response(TEXT_RESPONSE, THEMING_KEYS)

        self.assertEqual(
            [t.name for t in themes],
            ["Equilibrio tra vita e lavoro", "Relazioni a distanza"],
        )
        self.assertEqual(
            themes[0].description,
            "Il confine tra tempo privato e professionale si sposta.",
        )
        self.assertEqual(themes[0].code_indices, (0, 3, 17))
        self.assertEqual(themes[1].code_indices, (4, 9, 12))
        self.assertEqual(
            themes[1].description, "I contatti con i colleghi diventano rari."
        )

    def test_no_theme(self):
        with self.assertRaisesRegex(
            ThemeParseError, "no recognizable theme header"
        ):
            parse_theme_response("Non riesco a individuare temi.")

    def test_empty(self):
        with self.assertRaisesRegex(ThemeParseError, "empty response"):
            parse_theme_response("")


class ValidateThemesTestCase(unittest.TestCase):
    def test_drop_unknown_indices(self):
        themes = [
            Theme("Benessere", "x", (1, 185, -1)),
            Theme("Fantasma", "y", (200,)),
            Theme("Tecnologia", "z", (0,)),
        ]

        with self.assertLogs("thema.theming", level="WARNING"):
            valid, warnings = validate_themes(themes, 185)

        self.assertEqual(
            valid,
            [Theme("Benessere", "x", (1,)), Theme("Tecnologia", "z", (0,))],
        )
        self.assertEqual(
            warnings,
            [
                "theme 'Benessere' cites unknown code indices 185, -1; "
                "dropped",
                "theme 'Fantasma' cites unknown code indices 200; dropped",
                "theme 'Fantasma' has no valid code indices; dropped",
            ],
        )


class RenderThemingPromptTestCase(unittest.TestCase):
    def test_render(self):
        codebook = make_codebook(names=["Isolamento", "Tecnologia"])
        template = builtin_template(PromptPhase.THEMING, "it")

        prompt = render_theming_prompt(codebook, template, 9)

        self.assertIn(
            "Analisi Tematica: [0]: Isolamento. Descrizione di Isolamento. "
            "Citazione su Isolamento, [1]: Tecnologia.",
            prompt,
        )
        self.assertIn("(almeno 9)", prompt)

    def test_wrong_phase(self):
        with self.assertRaisesRegex(
            TemplateError, "is not a theming template"
        ):
            render_theming_prompt(
                make_codebook(names=["a"]),
                builtin_template(PromptPhase.CODING, "it"),
                9,
            )


class GenerateThemesTestCase(unittest.IsolatedAsyncioTestCase):
    async def test_nine_themes(self):
        codebook = make_codebook()
        provider = mock_chat_provider(
            {FixtureMatcher(THEMING_MARKER, 0.0): theme_response(THEMES_T0)}
        )
        archived = {}

        def archive(temperature: float, text: str) -> Path:
            archived[temperature] = text
            return Path("raw/themes_T0.json.txt")

        theme_set = await generate_themes(
            codebook,
            builtin_template(PromptPhase.THEMING, "it"),
            provider,
            0.0,
            9,
            model="gpt-4-turbo",
            run_id="run-1",
            archive=archive,
        )

        self.assertEqual(len(theme_set.themes), 9)
        self.assertFalse(theme_set.below_minimum)
        self.assertEqual(theme_set.warnings, [])
        self.assertEqual(theme_set.coverage(len(codebook)), 1.0)
        self.assertTrue(
            all(
                0 <= i < 185 for t in theme_set.themes for i in t.code_indices
            )
        )
        self.assertEqual(theme_set.raw_response_path, "raw/themes_T0.json.txt")
        self.assertEqual(archived, {0.0: theme_response(THEMES_T0)})
        self.assertEqual(provider.requests[0].seed_tag, "run-1/themes/T0")
        self.assertEqual(provider.requests[0].model, "gpt-4-turbo")

    async def test_below_minimum(self):
        provider = mock_chat_provider(
            {THEMING_MARKER: theme_response(THEMES_T0[:5])}
        )

        with self.assertLogs("thema.theming", level="WARNING"):
            theme_set = await generate_themes(
                make_codebook(),
                builtin_template(PromptPhase.THEMING, "it"),
                provider,
                0.0,
                9,
                model="m",
            )

        self.assertEqual(len(theme_set.themes), 5)
        self.assertTrue(theme_set.below_minimum)
        self.assertEqual(
            theme_set.warnings,
            ["below minimum: 5 themes at T=0, requested at least 9"],
        )

    async def test_parse_error_archives_raw(self):
        provider = mock_chat_provider({THEMING_MARKER: "Non so."})
        archived = {}

        with self.assertRaises(ThemeParseError):
            await generate_themes(
                make_codebook(),
                builtin_template(PromptPhase.THEMING, "it"),
                provider,
                0.5,
                9,
                model="m",
                archive=archived.__setitem__,
            )

        self.assertEqual(archived, {0.5: "Non so."})

    async def test_invalid_temperature(self):
        with self.assertRaisesRegex(ConfigError, "not within"):
            await generate_themes(
                make_codebook(),
                builtin_template(PromptPhase.THEMING, "it"),
                mock_chat_provider({"x": "y"}),
                3.0,
                9,
                model="m",
            )


class SweepTemperaturesTestCase(unittest.IsolatedAsyncioTestCase):
    async def test_sweep(self):
        result = await sweep_temperatures(
            make_codebook(),
            builtin_template(PromptPhase.THEMING, "it"),
            sweep_provider(),
            SWEEP_TEMPERATURES,
            9,
            model="gpt-4-turbo",
            run_id="run-1",
        )

        self.assertEqual(len(result.theme_sets), 3)
        self.assertEqual(result.failures, [])
        self.assertEqual(
            [s.temperature for s in result.theme_sets], [0.25, 0.5, 0.75]
        )
        self.assertEqual(
            [len(s.themes) for s in result.theme_sets], [9, 9, 10]
        )
        self.assertGreater(result.token_usage.output, 0)

    async def test_failed_run(self):
        with self.assertLogs("thema.theming", level="WARNING"):
            result = await sweep_temperatures(
                make_codebook(),
                builtin_template(PromptPhase.THEMING, "it"),
                sweep_provider(failing=0.5),
                SWEEP_TEMPERATURES,
                9,
                model="m",
            )

        self.assertEqual(
            [s.temperature for s in result.theme_sets], [0.25, 0.75]
        )
        self.assertEqual(len(result.failures), 1)
        self.assertEqual(result.failures[0].temperature, 0.5)
        self.assertEqual(result.failures[0].exit_code, 3)

    async def test_no_temperatures(self):
        with self.assertRaisesRegex(ConfigError, "at least one temperature"):
            await sweep_temperatures(
                make_codebook(),
                builtin_template(PromptPhase.THEMING, "it"),
                sweep_provider(),
                [],
                9,
                model="m",
            )


class StabilityTestCase(unittest.IsolatedAsyncioTestCase):
    async def test_recurring_and_singletons(self):
        theme_sets = [
            theme_set(temperature, sweep_themes(temperature))
            for temperature in (0.75, 0.25, 0.5)
        ]

        report = await stability(theme_sets, MockEmbeddingProvider(), 0.7)

        self.assertEqual(
            report.runs, [("run-1", 0.25), ("run-1", 0.5), ("run-1", 0.75)]
        )
        self.assertEqual(
            [c.name for c in report.clusters],
            [name for name, _ in SWEEP_RECURRING],
        )
        for cluster in report.clusters:
            self.assertEqual(
                [m.temperature for m in cluster.members], [0.25, 0.5, 0.75]
            )
            self.assertEqual(len(cluster.similarities), 3)
            self.assertTrue(all(s.score == 1.0 for s in cluster.similarities))

        self.assertEqual(
            [(m.temperature, m.theme) for m in report.singletons],
            [
                (temperature, name)
                for temperature in SWEEP_TEMPERATURES
                for name, _ in SWEEP_SINGLETONS[temperature]
            ],
        )
        self.assertEqual(report.theme_count, 28)
        self.assertEqual(report.embedder_id, "mock-hash-256")

    async def test_one_member_per_run(self):
        theme_sets = [
            theme_set(0.25, [("Benessere", "salute")]),
            theme_set(
                0.5, [("Benessere", "salute"), ("Benessere fisico", "salute")]
            ),
        ]

        report = await stability(theme_sets, MockEmbeddingProvider(), 0.5)

        self.assertEqual(len(report.clusters), 1)
        self.assertEqual(
            [m.label for m in report.clusters[0].members],
            ["T=0.25: Benessere", "T=0.5: Benessere"],
        )
        self.assertEqual(
            [m.theme for m in report.singletons], ["Benessere fisico"]
        )

    async def test_near_duplicates_around_threshold(self):
        embedder = MockEmbeddingProvider()
        first = Theme("Benessere", "salute e pause", (0,))
        second = Theme("Benessere fisico", "salute e pause", (0,))
        a, b = await embedder.embed([first.text, second.text])
        score = cosine(a, b)
        self.assertGreater(score, 0.7)
        self.assertLess(score, 1.0)

        theme_sets = [
            theme_set(0.25, [("Benessere", "salute e pause")]),
            theme_set(0.5, [("Benessere fisico", "salute e pause")]),
        ]

        report = await stability(theme_sets, embedder, score)

        self.assertEqual(len(report.clusters), 1)
        self.assertEqual(report.singletons, [])
        self.assertAlmostEqual(
            report.clusters[0].similarities[0].score, score, places=5
        )

        report = await stability(theme_sets, embedder, min(1.0, score + 0.01))

        self.assertEqual(report.clusters, [])
        self.assertEqual(
            [m.theme for m in report.singletons],
            ["Benessere", "Benessere fisico"],
        )

    async def test_threshold_one_matches_identical(self):
        theme_sets = [
            theme_set(0.25, [("Benessere", "salute")]),
            theme_set(0.5, [("Benessere", "salute")]),
        ]

        report = await stability(theme_sets, MockEmbeddingProvider(), 1.0)

        self.assertEqual(len(report.clusters), 1)
        self.assertEqual(report.singletons, [])

    async def test_needs_two_runs(self):
        with self.assertRaisesRegex(EvaluationError, "at least two"):
            await stability(
                [theme_set(0.25, THEMES_T0)], MockEmbeddingProvider()
            )

    async def test_invalid_threshold(self):
        sets = [theme_set(0.25, THEMES_T0), theme_set(0.5, THEMES_T0)]

        with self.assertRaisesRegex(ConfigError, "not within"):
            await stability(sets, MockEmbeddingProvider(), 0.0)

    async def test_to_dict(self):
        sets = [theme_set(0.25, THEMES_T0[:1]), theme_set(0.5, THEMES_T0[:1])]

        data = stability_to_dict(
            await stability(sets, MockEmbeddingProvider(), 0.7)
        )

        self.assertEqual(data["match_threshold"], 0.7)
        self.assertEqual(data["clusters"][0]["name"], THEMES_T0[0][0])
        self.assertEqual(len(data["clusters"][0]["members"]), 2)
        json.dumps(data)


class ThemeSetJsonTestCase(unittest.TestCase):
    def test_round_trip(self):
        original = ThemeSet(
            run_id="run-1",
            temperature=0.25,
            min_themes=9,
            themes=[
                Theme("Benessere", "Salute, pause e «riposo».", (3, 1, 2)),
                Theme("Tecnologia", "", (0,)),
            ],
            raw_response_path="raw/themes_T0.25.json.txt",
            model="gpt-4-turbo",
            warnings=["below minimum: 2 themes at T=0.25, requested at least 9"],
        )

        with temp_directory() as temp_dir:
            path = theme_set_to_json(original, temp_dir / "themes_T0.25.json")

            self.assertEqual(theme_set_from_json(path), original)
            self.assertIn("«riposo»", path.read_text(encoding="utf-8"))

    def test_invalid_document(self):
        with temp_directory() as temp_dir:
            path = temp_dir / "themes.json"
            path.write_text('{"run_id": "x"}', encoding="utf-8")

            with self.assertRaisesRegex(
                ThemeParseError, "Invalid theme set document"
            ):
                theme_set_from_json(path)

            path.write_text("{", encoding="utf-8")
            with self.assertRaisesRegex(ThemeParseError, "not valid JSON"):
                theme_set_from_json(path)
