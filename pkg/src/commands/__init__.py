from .cli import CommandError, create_command_routes, run_command

__all__ = ["CommandError", "create_command_routes", "run_command"]
