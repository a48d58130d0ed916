#!/usr/bin/env python
"""QTwtt toolkit launcher.

Runs the command line interface from a source checkout without installing.
"""

import logging
import sys
from pathlib import Path


def main():
    """Main entry point for the QTwtt command line."""
    logger = logging.getLogger(__name__)

    # Add the project root to Python path
    script_dir = Path(__file__).resolve().parent
    if str(script_dir) not in sys.path:
        sys.path.insert(0, str(script_dir))

    try:
        from QTwttToolkit.cli import main as cli_main
    except ImportError as e:
        logger.error("Error importing QTwttToolkit: %s", e)
        logger.error("Python path: %s", sys.path)
        sys.exit(1)

    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
