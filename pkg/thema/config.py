# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import os
from collections.abc import Callable, Iterable, Mapping
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import (
    Any,
    Generic,
    Protocol,
    TypeVar,
)

from thema.coding import Normalization
from thema.corpus import DEFAULT_MAX_TRANSCRIPT_CHARS, DEFAULT_TRANSCRIPT_EXTENSION
from thema.errors import ConfigError, ConfigFileError
from thema.evaluation import DEFAULT_DIAGONAL_THRESHOLD, EmbedText
from thema.gateway import (
    DEFAULT_CHAT_ENDPOINT,
    DEFAULT_EMBEDDING_ENDPOINT,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_MOCK_EMBEDDING_DIMENSION,
    DEFAULT_PARALLELISM,
    DEFAULT_RATE_LIMIT,
    DEFAULT_REQUEST_TIMEOUT,
    MAX_TEMPERATURE,
)
from thema.helper import DEFAULT_FLOCK_WAIT_INTERVAL
from thema.prompting import BUILTIN_PREFIX, DEFAULT_MIN_THEMES
from thema.reporting import DEFAULT_COLOR_SCALE, ColorScale
from thema.theming import DEFAULT_STABILITY_THRESHOLD, DEFAULT_SWEEP_TEMPERATURES

try:
    import tomllib
except ImportError:
    import tomli as tomllib  # type: ignore[no-redef]

CONFIG_TABLE = "thema"
CONFIG_ENVIRONMENT_KEY = "THEMA_CONFIG"
DEFAULT_CONFIG_FILE = "thema.toml"
DEFAULT_USER_CONFIG_FILE = "~/.config/thema.toml"

DEFAULT_LANGUAGE = "it"
DEFAULT_PROVIDER = "http"
PROVIDERS = ("http", "mock")
DEFAULT_CHAT_MODEL = "gpt-3.5-turbo"
DEFAULT_THEMING_MODEL = "gpt-4-turbo"
DEFAULT_EMBEDDING_MODEL = "text-embedding-3-small"
DEFAULT_CHAT_API_KEY_ENV = "THEMA_API_KEY"
DEFAULT_EMBEDDING_API_KEY_ENV = "THEMA_EMBED_API_KEY"
DEFAULT_OUTPUT_ROOT = "runs"

DEFAULT_VERBOSITY = 1

T = TypeVar("T")
ValuesDict = dict[str, Any]
DefaultValueCallable = Callable[[ValuesDict], Any]
ValueTypeCallable = Callable[[Any], T]


def to_bool(value: Any) -> bool:
    """
    Convert a config or environment value into a bool
    """
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"Invalid boolean value {value!r}")


def to_temperatures(value: Any) -> tuple[float, ...]:
    """
    Convert "0.25,0.5,0.75" or a list of numbers into temperatures
    """
    items = value.split(",") if isinstance(value, str) else value
    try:
        return tuple(float(item) for item in items if str(item).strip())
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid temperature list {value!r}") from e


def _number(value_type: Callable[[Any], T]) -> Callable[[Any], T]:
    def convert(value: Any) -> T:
        try:
            return value_type(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid numeric value {value!r}") from e

    return convert


def environment_key(config_key: str) -> str:
    return f"THEMA_{config_key.replace('-', '_').upper()}"


@dataclass
class Setting(Generic[T]):
    config_key: str
    environment_key: str
    default_value: str | int | float | bool | None
    value_type: ValueTypeCallable[T]

    def resolve(self, values: ValuesDict) -> T | None:
        value: Any
        if self.environment_key in os.environ:
            value = os.environ.get(self.environment_key)
        elif self.config_key in values:
            value = values.get(self.config_key)
        else:
            value = self.default_value

        return None if value is None else self.value_type(value)


@dataclass
class DependentSetting(Generic[T]):
    config_key: str
    environment_key: str
    default_value: DefaultValueCallable
    value_type: ValueTypeCallable[T]

    def resolve(self, values: ValuesDict) -> T | None:
        if self.environment_key in os.environ:
            value = os.environ.get(self.environment_key)
        elif self.config_key in values:
            value = values.get(self.config_key)
        else:
            value = self.default_value(values)

        return None if value is None else self.value_type(value)


def _setting(
    key: str,
    default: str | int | float | bool | None,
    value_type: ValueTypeCallable[Any],
) -> Setting:
    return Setting(key, environment_key(key), default, value_type)


_SETTINGS = (
    _setting("corpus", None, Path),
    _setting("language", DEFAULT_LANGUAGE, str),
    _setting("transcript-extension", DEFAULT_TRANSCRIPT_EXTENSION, str),
    _setting(
        "max-transcript-chars", DEFAULT_MAX_TRANSCRIPT_CHARS, _number(int)
    ),
    _setting("provider", DEFAULT_PROVIDER, str),
    _setting("fixture-dir", None, Path),
    _setting("chat-endpoint", DEFAULT_CHAT_ENDPOINT, str),
    _setting("chat-model", DEFAULT_CHAT_MODEL, str),
    _setting("theming-model", DEFAULT_THEMING_MODEL, str),
    _setting("chat-api-key-env", DEFAULT_CHAT_API_KEY_ENV, str),
    _setting("embedding-endpoint", DEFAULT_EMBEDDING_ENDPOINT, str),
    _setting("embedding-model", DEFAULT_EMBEDDING_MODEL, str),
    _setting("embedding-api-key-env", DEFAULT_EMBEDDING_API_KEY_ENV, str),
    _setting(
        "mock-embedding-dimension",
        DEFAULT_MOCK_EMBEDDING_DIMENSION,
        _number(int),
    ),
    _setting("request-timeout", DEFAULT_REQUEST_TIMEOUT, _number(float)),
    _setting("max-output-tokens", DEFAULT_MAX_OUTPUT_TOKENS, _number(int)),
    _setting("parallelism", DEFAULT_PARALLELISM, _number(int)),
    _setting("rate-limit", DEFAULT_RATE_LIMIT, _number(float)),
    _setting("max-attempts", DEFAULT_MAX_ATTEMPTS, _number(int)),
    _setting("coding-temperature", 0.0, _number(float)),
    _setting("theming-temperature", 0.0, _number(float)),
    _setting(
        "sweep-temperatures",
        ",".join(str(t) for t in DEFAULT_SWEEP_TEMPERATURES),
        to_temperatures,
    ),
    _setting("min-themes", DEFAULT_MIN_THEMES, _number(int)),
    _setting(
        "stability-threshold", DEFAULT_STABILITY_THRESHOLD, _number(float)
    ),
    _setting(
        "diagonal-threshold", DEFAULT_DIAGONAL_THRESHOLD, _number(float)
    ),
    _setting("normalization", Normalization.CASEFOLD_TRIM.value, str),
    _setting("output-root", DEFAULT_OUTPUT_ROOT, Path),
    _setting("embed-text", EmbedText.NAMES.value, str),
    _setting("color-scale", DEFAULT_COLOR_SCALE, str),
    _setting("run-id", None, str),
    _setting("wait-interval", DEFAULT_FLOCK_WAIT_INTERVAL, _number(int)),
    _setting("no-wait", False, to_bool),
    _setting("dry-run", False, to_bool),
    _setting("verbose", None, _number(int)),
)


_DEPENDENT_SETTINGS = (
    DependentSetting(
        "coding-template",
        environment_key("coding-template"),
        lambda values: f"{BUILTIN_PREFIX}{values['language']}",
        str,
    ),
    DependentSetting(
        "theming-template",
        environment_key("theming-template"),
        lambda values: f"{BUILTIN_PREFIX}{values['language']}",
        str,
    ),
)


def flatten(table: Mapping[str, Any], prefix: str = "") -> ValuesDict:
    """
    Flatten nested tables into dash joined keys

    [thema.chat] model = "x" becomes {"chat-model": "x"}
    """
    values: ValuesDict = {}
    for key, value in table.items():
        name = f"{prefix}-{key}" if prefix else key
        if isinstance(value, dict):
            values.update(flatten(value, name))
        else:
            values[name] = value
    return values


class ConfigDict(Protocol):
    def items(self) -> Iterable[tuple[str, Any]]: ...

    def __getitem__(self, key: str) -> Any: ...


class Config:
    """
    A class to load configuration values from the environment, config file and
    defaults.
    """

    def __init__(self) -> None:
        self._config: ValuesDict = {}

    def load_from_config_file(self, config_file: Path) -> None:
        try:
            content = config_file.read_text(encoding="utf-8")
            config_data = tomllib.loads(content)
            self._config = flatten(config_data.get(CONFIG_TABLE, {}))
        except OSError as e:
            raise ConfigFileError(
                f"Can't load config file {config_file.absolute()}. "
                f"Error was {e}."
            ) from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigFileError(
                f"Can't load config file. {config_file.absolute()} is not "
                "a valid TOML file."
            ) from e

    def apply_settings(self) -> None:
        for setting in _SETTINGS:
            self._config[setting.config_key] = setting.resolve(self._config)

    def apply_dependent_settings(self) -> None:
        for setting in _DEPENDENT_SETTINGS:
            self._config[setting.config_key] = setting.resolve(self._config)

    @classmethod
    def load(cls, config_file: Path | None = None) -> "Config":
        """
        Load config values from config_file and apply all settings
        """
        config = cls()

        if config_file:
            config.load_from_config_file(config_file)

        config.apply_settings()
        config.apply_dependent_settings()

        return config

    def items(self) -> Iterable[tuple[str, Any]]:
        return self._config.items()

    def __getitem__(self, key: str) -> Any:
        return self._config[key]

    def __setitem__(self, key: str, value: Any) -> None:
        self._config[key] = value

    def __contains__(self, key: object) -> bool:
        return key in self._config

    def __len__(self) -> int:
        return len(self._config)


def find_config_file(config_file: str | None) -> Path | None:
    """
    Determine the config file to load

    An explicit path must exist. Otherwise THEMA_CONFIG, ./thema.toml and
    ~/.config/thema.toml are tried in this order.
    """
    if config_file is None:
        config_file = os.environ.get(CONFIG_ENVIRONMENT_KEY)

    if config_file is not None:
        path = Path(config_file).expanduser().resolve()
        if not path.exists():
            raise ConfigFileError(f"Config file {config_file} does not exist.")
        return path

    for file in (DEFAULT_CONFIG_FILE, DEFAULT_USER_CONFIG_FILE):
        path = Path(file).expanduser().resolve()
        if path.exists():
            return path

    return None


def _check_temperature(name: str, temperature: float) -> None:
    if not 0.0 <= temperature <= MAX_TEMPERATURE:
        raise ConfigError(
            f"{name} {temperature:g} is not within [0, {MAX_TEMPERATURE:g}]"
        )


def _check_threshold(name: str, threshold: float) -> None:
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"{name} {threshold:g} is not within (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    """
    Resolved parameters of a run

    API keys are never part of the config. Only the names of the
    environment variables holding them are.
    """

    corpus: Path | None = None
    language: str = DEFAULT_LANGUAGE
    transcript_extension: str = DEFAULT_TRANSCRIPT_EXTENSION
    max_transcript_chars: int = DEFAULT_MAX_TRANSCRIPT_CHARS
    provider: str = DEFAULT_PROVIDER
    fixture_dir: Path | None = None
    chat_endpoint: str = DEFAULT_CHAT_ENDPOINT
    chat_model: str = DEFAULT_CHAT_MODEL
    theming_model: str = DEFAULT_THEMING_MODEL
    chat_api_key_env: str = DEFAULT_CHAT_API_KEY_ENV
    embedding_endpoint: str = DEFAULT_EMBEDDING_ENDPOINT
    embedding_model: str = DEFAULT_EMBEDDING_MODEL
    embedding_api_key_env: str = DEFAULT_EMBEDDING_API_KEY_ENV
    mock_embedding_dimension: int = DEFAULT_MOCK_EMBEDDING_DIMENSION
    request_timeout: float = DEFAULT_REQUEST_TIMEOUT
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    parallelism: int = DEFAULT_PARALLELISM
    rate_limit: float = DEFAULT_RATE_LIMIT
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    coding_temperature: float = 0.0
    theming_temperature: float = 0.0
    sweep_temperatures: tuple[float, ...] = DEFAULT_SWEEP_TEMPERATURES
    min_themes: int = DEFAULT_MIN_THEMES
    stability_threshold: float = DEFAULT_STABILITY_THRESHOLD
    diagonal_threshold: float = DEFAULT_DIAGONAL_THRESHOLD
    normalization: str = Normalization.CASEFOLD_TRIM.value
    coding_template: str = f"{BUILTIN_PREFIX}{DEFAULT_LANGUAGE}"
    theming_template: str = f"{BUILTIN_PREFIX}{DEFAULT_LANGUAGE}"
    output_root: Path = Path(DEFAULT_OUTPUT_ROOT)
    embed_text: str = EmbedText.NAMES.value
    color_scale: str = DEFAULT_COLOR_SCALE
    run_id: str | None = None
    wait_interval: int = DEFAULT_FLOCK_WAIT_INTERVAL
    no_wait: bool = False
    dry_run: bool = False

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def from_values(cls, values: Mapping[str, Any]) -> "RunConfig":
        """
        Create a config from resolved values, e.g. a parsed Namespace

        Keys may use dashes or underscores. Unknown keys are ignored.
        """
        normalized = {key.replace("-", "_"): value for key, value in values.items()}
        kwargs = {
            field.name: normalized[field.name]
            for field in fields(cls)
            if normalized.get(field.name) is not None
        }
        if "sweep_temperatures" in kwargs:
            kwargs["sweep_temperatures"] = to_temperatures(
                kwargs["sweep_temperatures"]
            )
        return cls(**kwargs)

    def validate(self) -> None:
        if self.provider not in PROVIDERS:
            raise ConfigError(
                f"Unknown provider '{self.provider}'. Use one of "
                f"{', '.join(PROVIDERS)}."
            )
        if self.provider == "mock" and self.fixture_dir is None:
            raise ConfigError("The mock provider requires a fixture directory")

        _check_temperature("coding-temperature", self.coding_temperature)
        _check_temperature("theming-temperature", self.theming_temperature)
        if not self.sweep_temperatures:
            raise ConfigError("sweep-temperatures must not be empty")
        for temperature in self.sweep_temperatures:
            _check_temperature("sweep temperature", temperature)

        _check_threshold("stability-threshold", self.stability_threshold)
        _check_threshold("diagonal-threshold", self.diagonal_threshold)

        if self.min_themes < 1:
            raise ConfigError("min-themes must be at least 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if not 1 <= self.max_attempts <= DEFAULT_MAX_ATTEMPTS:
            raise ConfigError(
                f"max-attempts must be between 1 and {DEFAULT_MAX_ATTEMPTS}"
            )
        if self.max_output_tokens < 1:
            raise ConfigError("max-output-tokens must be positive")
        if self.request_timeout <= 0:
            raise ConfigError("request-timeout must be positive")
        if self.rate_limit < 0:
            raise ConfigError("rate-limit must not be negative")

        if self.normalization not in {n.value for n in Normalization}:
            raise ConfigError(
                f"Unknown normalization '{self.normalization}'. Use one of "
                f"{', '.join(n.value for n in Normalization)}."
            )
        if self.embed_text not in {e.value for e in EmbedText}:
            raise ConfigError(
                f"Unknown embed text mode '{self.embed_text}'. Use one of "
                f"{', '.join(e.value for e in EmbedText)}."
            )
        ColorScale.from_string(self.color_scale)

    @property
    def normalization_mode(self) -> Normalization:
        return Normalization(self.normalization)

    @property
    def embed_text_mode(self) -> EmbedText:
        return EmbedText(self.embed_text)

    @property
    def color_scale_value(self) -> ColorScale:
        return ColorScale.from_string(self.color_scale)

    @property
    def lock_wait_interval(self) -> int | None:
        return None if self.no_wait else self.wait_interval

    def snapshot(self) -> dict[str, Any]:
        """
        JSON compatible copy of all values for the run manifest
        """
        snapshot = {}
        for key, value in asdict(self).items():
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            snapshot[key.replace("_", "-")] = value
        return snapshot
