from typing import Any, Dict

from loguru import logger

from backend.llm.gateway import LlmBackend
from backend.models import LlmRequest, RoleTag
from backend.utils.prompts import PromptLibrary


class BaseAgent:
    """Base class for LLM-driven agents; each agent speaks with one role tag"""

    def __init__(self, role: RoleTag, name: str, llm: LlmBackend,
                 prompts: PromptLibrary, max_output: int = 1024):
        self.role = role
        self.name = name
        self.llm = llm
        self.prompts = prompts
        self.max_output = max_output

    def render(self, template: str, **context: Any) -> str:
        return self.prompts.render(template, **context)

    def complete(self, prompt: str) -> str:
        """One temperature-0 call under this agent's role"""
        request = LlmRequest(role_tag=self.role, prompt=prompt, max_output=self.max_output)
        return self.llm.complete(request)

    def log_action(self, action: str, details: Dict[str, Any] = None):
        """Log agent actions for debugging"""
        logger.bind(agent=self.name).info("{}: {}", action, details or {})

    def __str__(self):
        return f"{self.name} ({self.role.value})"

    def __repr__(self):
        return f"<{self.__class__.__name__} name={self.name} role={self.role.value}>"
