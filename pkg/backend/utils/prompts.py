"""
Jinja2 prompt templates.

Every LLM prompt lives as a ``.j2`` file in the template directory (the
``prompts/`` package by default, overridable via ``prompts_dir``). The same
templates are used for every backend.
"""
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound

from backend.errors import ConfigError

DEFAULT_PROMPTS_DIR = Path(__file__).resolve().parent.parent / "prompts"


class PromptLibrary:
    def __init__(self, template_dir: Path = DEFAULT_PROMPTS_DIR):
        self.template_dir = Path(template_dir)
        self._env = Environment(
            loader=FileSystemLoader(str(self.template_dir)),
            autoescape=False,
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )

    def render(self, name: str, **context: Any) -> str:
        try:
            template = self._env.get_template(f"{name}.j2")
        except TemplateNotFound:
            raise ConfigError(f"prompt template {name}.j2 not found in {self.template_dir}")
        return template.render(**context)
