from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple


def argument(*flags: str, **kwargs: Any) -> Tuple[Tuple[str, ...], Dict[str, Any]]:
    """Arguments for argparse's add_argument, kept until the command is included"""
    return flags, kwargs


@dataclass
class Command:
    name: str
    handler: Callable
    help: str = ""
    arguments: List[Tuple[Tuple[str, ...], Dict[str, Any]]] = field(default_factory=list)
    tags: List[str] = field(default_factory=list)


class CommandRouter:
    """Collects command handlers for main.include_router"""

    def __init__(self, tags: List[str] = None):
        self.tags = list(tags or [])
        self.commands: List[Command] = []

    def command(self, name: str, help: str = "", arguments=()):
        def decorator(handler: Callable) -> Callable:
            self.commands.append(Command(name, handler, help, list(arguments), self.tags))
            return handler
        return decorator
