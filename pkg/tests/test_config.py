# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

from pontos.testing import temp_directory, temp_file

from thema.coding import Normalization
from thema.config import (
    DEFAULT_CHAT_API_KEY_ENV,
    DEFAULT_CHAT_MODEL,
    DEFAULT_EMBEDDING_API_KEY_ENV,
    DEFAULT_EMBEDDING_MODEL,
    DEFAULT_LANGUAGE,
    DEFAULT_OUTPUT_ROOT,
    DEFAULT_PROVIDER,
    DEFAULT_THEMING_MODEL,
    Config,
    RunConfig,
    environment_key,
    find_config_file,
    flatten,
    to_bool,
    to_temperatures,
)
from thema.errors import ConfigError, ConfigFileError
from thema.evaluation import DEFAULT_DIAGONAL_THRESHOLD, EmbedText
from thema.gateway import (
    DEFAULT_CHAT_ENDPOINT,
    DEFAULT_EMBEDDING_ENDPOINT,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_MOCK_EMBEDDING_DIMENSION,
    DEFAULT_PARALLELISM,
    DEFAULT_RATE_LIMIT,
)
from thema.helper import DEFAULT_FLOCK_WAIT_INTERVAL
from thema.prompting import DEFAULT_MIN_THEMES
from thema.reporting import DEFAULT_COLOR_SCALE
from thema.theming import DEFAULT_STABILITY_THRESHOLD


def config_file_mock(content: str) -> MagicMock:
    path_mock = MagicMock(spec=Path)
    path_mock.read_text.return_value = content
    return path_mock


class ConvertTestCase(unittest.TestCase):
    def test_to_bool(self):
        for value in (True, "1", "true", "Yes", " on "):
            self.assertTrue(to_bool(value))
        for value in (False, "0", "false", "no", "off", ""):
            self.assertFalse(to_bool(value))

        with self.assertRaisesRegex(ConfigError, "Invalid boolean"):
            to_bool("maybe")

    def test_to_temperatures(self):
        self.assertEqual(to_temperatures("0.25,0.5,0.75"), (0.25, 0.5, 0.75))
        self.assertEqual(to_temperatures("0, 1,"), (0.0, 1.0))
        self.assertEqual(to_temperatures([0.1, 1]), (0.1, 1.0))

        with self.assertRaisesRegex(ConfigError, "Invalid temperature list"):
            to_temperatures("0.2,warm")

    def test_environment_key(self):
        self.assertEqual(
            environment_key("chat-api-key-env"), "THEMA_CHAT_API_KEY_ENV"
        )

    def test_flatten(self):
        self.assertEqual(
            flatten({"chat": {"model": "m", "endpoint": "e"}, "lang": "it"}),
            {"chat-model": "m", "chat-endpoint": "e", "lang": "it"},
        )


class ConfigTestCase(unittest.TestCase):
    def test_defaults(self):
        values = Config.load()

        self.assertEqual(len(values), 36)
        self.assertIsNone(values["corpus"])
        self.assertEqual(values["language"], DEFAULT_LANGUAGE)
        self.assertEqual(values["transcript-extension"], ".txt")
        self.assertEqual(values["max-transcript-chars"], 48_000)
        self.assertEqual(values["provider"], DEFAULT_PROVIDER)
        self.assertIsNone(values["fixture-dir"])
        self.assertEqual(values["chat-endpoint"], DEFAULT_CHAT_ENDPOINT)
        self.assertEqual(values["chat-model"], DEFAULT_CHAT_MODEL)
        self.assertEqual(values["theming-model"], DEFAULT_THEMING_MODEL)
        self.assertEqual(values["chat-api-key-env"], DEFAULT_CHAT_API_KEY_ENV)
        self.assertEqual(
            values["embedding-endpoint"], DEFAULT_EMBEDDING_ENDPOINT
        )
        self.assertEqual(values["embedding-model"], DEFAULT_EMBEDDING_MODEL)
        self.assertEqual(
            values["embedding-api-key-env"], DEFAULT_EMBEDDING_API_KEY_ENV
        )
        self.assertEqual(
            values["mock-embedding-dimension"],
            DEFAULT_MOCK_EMBEDDING_DIMENSION,
        )
        self.assertEqual(values["parallelism"], DEFAULT_PARALLELISM)
        self.assertEqual(values["rate-limit"], DEFAULT_RATE_LIMIT)
        self.assertEqual(values["max-attempts"], DEFAULT_MAX_ATTEMPTS)
        self.assertEqual(values["coding-temperature"], 0.0)
        self.assertEqual(values["theming-temperature"], 0.0)
        self.assertEqual(values["sweep-temperatures"], (0.25, 0.5, 0.75))
        self.assertEqual(values["min-themes"], DEFAULT_MIN_THEMES)
        self.assertEqual(
            values["stability-threshold"], DEFAULT_STABILITY_THRESHOLD
        )
        self.assertEqual(
            values["diagonal-threshold"], DEFAULT_DIAGONAL_THRESHOLD
        )
        self.assertEqual(values["normalization"], "casefold_trim")
        self.assertEqual(values["output-root"], Path(DEFAULT_OUTPUT_ROOT))
        self.assertEqual(values["embed-text"], "names")
        self.assertEqual(values["color-scale"], DEFAULT_COLOR_SCALE)
        self.assertIsNone(values["run-id"])
        self.assertEqual(values["wait-interval"], DEFAULT_FLOCK_WAIT_INTERVAL)
        self.assertFalse(values["no-wait"])
        self.assertFalse(values["dry-run"])
        self.assertIsNone(values["verbose"])
        self.assertEqual(values["coding-template"], "builtin:it")
        self.assertEqual(values["theming-template"], "builtin:it")

    def test_config_file(self):
        content = """[thema]
corpus = "interviews"
language = "en"
provider = "mock"
fixture-dir = "fixtures"
parallelism = 2
rate-limit = 0
sweep-temperatures = [0.2, 0.4]
no-wait = true

[thema.chat]
model = "local-model"
endpoint = "http://localhost:8080/v1/chat/completions"
"""
        values = Config.load(config_file_mock(content))

        self.assertEqual(values["corpus"], Path("interviews"))
        self.assertEqual(values["language"], "en")
        self.assertEqual(values["provider"], "mock")
        self.assertEqual(values["fixture-dir"], Path("fixtures"))
        self.assertEqual(values["parallelism"], 2)
        self.assertEqual(values["rate-limit"], 0.0)
        self.assertEqual(values["sweep-temperatures"], (0.2, 0.4))
        self.assertTrue(values["no-wait"])
        self.assertEqual(values["chat-model"], "local-model")
        self.assertEqual(
            values["chat-endpoint"],
            "http://localhost:8080/v1/chat/completions",
        )
        # templates follow the language
        self.assertEqual(values["coding-template"], "builtin:en")
        self.assertEqual(values["theming-template"], "builtin:en")

    def test_template_in_config_file(self):
        content = """[thema]
language = "en"
coding-template = "prompts/coding.txt"
"""
        values = Config.load(config_file_mock(content))

        self.assertEqual(values["coding-template"], "prompts/coding.txt")
        self.assertEqual(values["theming-template"], "builtin:en")

    @patch.dict(
        "os.environ",
        {
            "THEMA_CORPUS": "/data/interviews",
            "THEMA_LANGUAGE": "en",
            "THEMA_CHAT_MODEL": "env-model",
            "THEMA_PARALLELISM": "8",
            "THEMA_SWEEP_TEMPERATURES": "0.1,0.9",
            "THEMA_NO_WAIT": "1",
            "THEMA_DRY_RUN": "true",
            "THEMA_VERBOSE": "2",
            "THEMA_THEMING_TEMPLATE": "theming.txt",
        },
    )
    def test_environment(self):
        values = Config.load()

        self.assertEqual(values["corpus"], Path("/data/interviews"))
        self.assertEqual(values["language"], "en")
        self.assertEqual(values["chat-model"], "env-model")
        self.assertEqual(values["parallelism"], 8)
        self.assertEqual(values["sweep-temperatures"], (0.1, 0.9))
        self.assertTrue(values["no-wait"])
        self.assertTrue(values["dry-run"])
        self.assertEqual(values["verbose"], 2)
        self.assertEqual(values["coding-template"], "builtin:en")
        self.assertEqual(values["theming-template"], "theming.txt")

    @patch.dict(
        "os.environ",
        {"THEMA_CHAT_MODEL": "env-model", "THEMA_MIN_THEMES": "5"},
    )
    def test_environment_overrides_config_file(self):
        content = """[thema]
chat-model = "file-model"
min-themes = 7
theming-model = "file-theming-model"
"""
        values = Config.load(config_file_mock(content))

        self.assertEqual(values["chat-model"], "env-model")
        self.assertEqual(values["min-themes"], 5)
        self.assertEqual(values["theming-model"], "file-theming-model")

    @patch.dict("os.environ", {"THEMA_PARALLELISM": "many"})
    def test_invalid_number(self):
        with self.assertRaisesRegex(ConfigError, "Invalid numeric value"):
            Config.load()

    def test_invalid_toml(self):
        path_mock = config_file_mock("This is not TOML")
        path_mock.absolute.return_value = "/foo/thema.toml"

        with self.assertRaisesRegex(
            ConfigFileError,
            "Can't load config file. /foo/thema.toml is not a valid TOML "
            "file.",
        ):
            Config.load(path_mock)

    def test_load_ioerror(self):
        with self.assertRaisesRegex(
            ConfigFileError,
            r"Can't load config file .*foo\.toml\. Error was .*",
        ):
            Config.load(Path("foo.toml"))

    def test_other_tables_are_ignored(self):
        values = Config.load(
            config_file_mock('[other]\nchat-model = "not-mine"\n')
        )

        self.assertEqual(values["chat-model"], DEFAULT_CHAT_MODEL)

    def test_getitem(self):
        values = Config.load(config_file_mock("[thema]\nmin-themes = 4\n"))

        self.assertEqual(values["min-themes"], 4)
        self.assertIn("min-themes", values)

    def test_setitem(self):
        config = Config()

        config["language"] = "en"
        config.apply_settings()
        config.apply_dependent_settings()

        self.assertEqual(config["language"], "en")
        self.assertEqual(config["coding-template"], "builtin:en")


class FindConfigFileTestCase(unittest.TestCase):
    def test_explicit(self):
        with temp_file("[thema]\n", name="thema.toml") as f:
            self.assertEqual(find_config_file(str(f)), f.resolve())

    def test_explicit_missing(self):
        with self.assertRaisesRegex(ConfigFileError, "does not exist"):
            find_config_file("does-not-exist.toml")

    def test_environment(self):
        with temp_file("[thema]\n", name="env.toml") as f:
            with patch.dict("os.environ", {"THEMA_CONFIG": str(f)}):
                self.assertEqual(find_config_file(None), f.resolve())

    @patch("thema.config.DEFAULT_USER_CONFIG_FILE", "does-not-exist.toml")
    @patch("thema.config.DEFAULT_CONFIG_FILE", "also-missing.toml")
    def test_none(self):
        with patch.dict("os.environ", {}, clear=True):
            self.assertIsNone(find_config_file(None))

    def test_user_config_file(self):
        with temp_directory() as temp_dir:
            user_file = temp_dir / "thema.toml"
            user_file.write_text("[thema]\n", encoding="utf-8")

            with patch(
                "thema.config.DEFAULT_USER_CONFIG_FILE", str(user_file)
            ), patch(
                "thema.config.DEFAULT_CONFIG_FILE", "also-missing.toml"
            ), patch.dict(
                "os.environ", {}, clear=True
            ):
                self.assertEqual(find_config_file(None), user_file.resolve())


class RunConfigTestCase(unittest.TestCase):
    def test_defaults(self):
        config = RunConfig()

        self.assertEqual(config.provider, "http")
        self.assertEqual(
            config.normalization_mode, Normalization.CASEFOLD_TRIM
        )
        self.assertEqual(config.embed_text_mode, EmbedText.NAMES)
        self.assertEqual(config.color_scale_value.color(1.0), "#4575b4")
        self.assertEqual(
            config.lock_wait_interval, DEFAULT_FLOCK_WAIT_INTERVAL
        )

    def test_from_config_values(self):
        values = Config.load(
            config_file_mock(
                '[thema]\nprovider = "mock"\nfixture-dir = "fixtures"\n'
            )
        )

        config = RunConfig.from_values(dict(values.items()))

        self.assertEqual(config.provider, "mock")
        self.assertEqual(config.fixture_dir, Path("fixtures"))
        self.assertEqual(config.coding_template, "builtin:it")

    def test_from_values_ignores_unknown_and_none(self):
        config = RunConfig.from_values(
            {
                "command": "code",
                "chat_model": None,
                "sweep_temperatures": "0.3,0.6",
            }
        )

        self.assertEqual(config.chat_model, DEFAULT_CHAT_MODEL)
        self.assertEqual(config.sweep_temperatures, (0.3, 0.6))

    def test_no_wait(self):
        self.assertIsNone(RunConfig(no_wait=True).lock_wait_interval)

    def test_invalid_values(self):
        cases = (
            ({"provider": "local"}, "Unknown provider 'local'"),
            ({"provider": "mock"}, "requires a fixture directory"),
            ({"coding_temperature": 2.5}, r"coding-temperature 2.5 is not"),
            ({"theming_temperature": -0.1}, "theming-temperature"),
            ({"sweep_temperatures": ()}, "must not be empty"),
            ({"sweep_temperatures": (0.5, 3.0)}, "sweep temperature 3"),
            ({"stability_threshold": 0.0}, r"not within \(0, 1\]"),
            ({"diagonal_threshold": 1.5}, "diagonal-threshold"),
            ({"min_themes": 0}, "min-themes must be at least 1"),
            ({"parallelism": 0}, "parallelism must be at least 1"),
            ({"max_attempts": 6}, "max-attempts must be between 1 and 5"),
            ({"max_output_tokens": 0}, "max-output-tokens"),
            ({"request_timeout": 0}, "request-timeout"),
            ({"rate_limit": -1}, "rate-limit"),
            ({"normalization": "stem"}, "Unknown normalization 'stem'"),
            ({"embed_text": "quotes"}, "Unknown embed text mode 'quotes'"),
            ({"color_scale": "#fff"}, "three colors"),
        )
        for kwargs, message in cases:
            with self.subTest(**kwargs):
                with self.assertRaisesRegex(ConfigError, message):
                    RunConfig(**kwargs)

    def test_snapshot(self):
        config = RunConfig(
            corpus=Path("interviews"), sweep_temperatures=(0.25, 0.5)
        )

        snapshot = config.snapshot()

        self.assertEqual(snapshot["corpus"], "interviews")
        self.assertEqual(snapshot["sweep-temperatures"], [0.25, 0.5])
        self.assertEqual(snapshot["chat-api-key-env"], "THEMA_API_KEY")
        self.assertEqual(snapshot["output-root"], "runs")
        self.assertNotIn("api-key", snapshot)
