import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from .commands import create_command_routes, run_command
from .services import ExperimentService

# Load environment variables from .env file
load_dotenv()


class NdclApp:
    """Command-line application: logging setup plus the sub-command parser."""

    def __init__(self):
        self.log_level = os.getenv("NDCL_LOG_LEVEL", "INFO").upper()
        self._setup_logging()
        self._setup_commands()

    def _setup_logging(self):
        """Send logs to stderr so stdout carries only command output."""
        level = getattr(logging, self.log_level, None)
        if not isinstance(level, int):
            level = logging.INFO
        logging.basicConfig(
            level=level,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )

    def _setup_commands(self):
        self.parser = create_command_routes(lambda workers: ExperimentService(eval_workers=workers))

    def run(self, argv: Optional[List[str]] = None) -> int:
        return run_command(self.parser, argv)


def main(argv: Optional[List[str]] = None) -> int:
    return NdclApp().run(argv)


if __name__ == "__main__":
    sys.exit(main())
