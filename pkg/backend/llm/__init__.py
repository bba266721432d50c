from .gateway import (
    LlmBackend,
    GroqBackend,
    LlmScript,
    ScriptedBackend,
    RecordingBackend,
    RoleRoutedBackend,
    load_script,
)

__all__ = [
    "LlmBackend",
    "GroqBackend",
    "LlmScript",
    "ScriptedBackend",
    "RecordingBackend",
    "RoleRoutedBackend",
    "load_script",
]
