import json
import os
from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from backend.errors import ConfigError
from backend.models import ExecutionOptions, FixturesMode, RoleTag, TemporalParams


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Logging Settings
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[Path] = None

    # Engine config used when --config is not given
    CONFIG_PATH: Path = Path("fixtures/scenario/engine.json")

    # HTTP
    HTTP_TIMEOUT: float = 10.0


settings = Settings()


# ---------------------------------------------------------------------------
# Engine configuration (JSON document)
# ---------------------------------------------------------------------------

class LiveBackendConfig(BaseModel):
    endpoint_url: Optional[str] = None
    model_name: str = "llama-3.1-70b-versatile"
    api_key_env: str = "GROQ_API_KEY"
    timeout_seconds: float = Field(default=settings.HTTP_TIMEOUT, gt=0)


class LlmConfig(BaseModel):
    mode: str = Field(default="scripted", pattern="^(scripted|live)$")
    script_path: Optional[Path] = None
    live: LiveBackendConfig = LiveBackendConfig()
    roles: Dict[RoleTag, LiveBackendConfig] = {}
    max_output: Dict[RoleTag, int] = {
        RoleTag.PLANNER: 1024,
        RoleTag.REWRITER: 512,
        RoleTag.GENERATOR: 2048,
        RoleTag.ANSWERER: 512,
    }


class ProviderConfig(BaseModel):
    endpoint_url: str
    api_key_env: Optional[str] = None


class ConnectorConfig(BaseModel):
    news: ProviderConfig = ProviderConfig(
        endpoint_url="https://newsapi.org/v2/everything", api_key_env="NEWSAPI_KEY",
    )
    web: ProviderConfig = ProviderConfig(
        endpoint_url="https://serpapi.com/search", api_key_env="SERPAPI_KEY",
    )
    finance: ProviderConfig = ProviderConfig(
        endpoint_url="https://query1.finance.yahoo.com/v8/finance/chart",
    )
    news_lookback_days: int = Field(default=7, ge=1)
    finance_lookback_days: int = Field(default=7, ge=1)
    timeout_seconds: float = Field(default=settings.HTTP_TIMEOUT, gt=0)


class TemporalConfig(TemporalParams):
    anchor_to_query_dates: bool = True

    def params(self) -> TemporalParams:
        return TemporalParams(
            window_hours=self.window_hours,
            numerator_hours=self.numerator_hours,
            min_delta_hours=self.min_delta_hours,
        )


class FixturesConfig(BaseModel):
    directory: Path = Path("fixtures")
    mode: FixturesMode = FixturesMode.REPLAY


class EngineConfig(BaseModel):
    """Everything needed to wire services for one CLI command"""
    llm: LlmConfig = LlmConfig()
    connectors: ConnectorConfig = ConnectorConfig()
    temporal: TemporalConfig = TemporalConfig()
    fixtures: FixturesConfig = FixturesConfig()
    execution: ExecutionOptions = ExecutionOptions()
    prompts_dir: Path = Path(__file__).parent / "prompts"
    output_dir: Path = Path("out")

    def resolve_paths(self, base: Path) -> "EngineConfig":
        """Make relative paths relative to ``base`` (the config file directory)"""
        def fix(path: Optional[Path]) -> Optional[Path]:
            if path is None or path.is_absolute():
                return path
            return (base / path).resolve()

        self.llm.script_path = fix(self.llm.script_path)
        self.fixtures.directory = fix(self.fixtures.directory)
        self.prompts_dir = fix(self.prompts_dir)
        self.output_dir = fix(self.output_dir)
        return self

    def check(self) -> "EngineConfig":
        """
        Startup checks: referenced paths exist and live credentials are set.

        Raises:
            ConfigError naming the offending path or environment variable
        """
        if not self.prompts_dir.is_dir():
            raise ConfigError(f"prompts_dir does not exist: {self.prompts_dir}")
        if self.fixtures.mode != FixturesMode.RECORD and not self.fixtures.directory.is_dir():
            raise ConfigError(f"fixtures directory does not exist: {self.fixtures.directory}")

        if self.llm.mode == "scripted":
            if self.llm.script_path is None or not self.llm.script_path.is_file():
                raise ConfigError(f"llm.script_path does not exist: {self.llm.script_path}")
        else:
            for backend in [self.llm.live, *self.llm.roles.values()]:
                require_env(backend.api_key_env)

        if self.fixtures.mode != FixturesMode.REPLAY:
            require_env(self.connectors.news.api_key_env)
        return self


def require_env(name: Optional[str]) -> Optional[str]:
    if not name:
        return None
    value = os.environ.get(name)
    if not value:
        raise ConfigError(f"environment variable {name} is not set")
    return value


def load_config(path: Path) -> EngineConfig:
    """
    Load and validate an engine config file.

    Raises:
        ConfigError: unreadable file, invalid JSON or schema errors
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    try:
        config = EngineConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{path}: {field}: {first['msg']}")
    return config.resolve_paths(path.parent.resolve())
