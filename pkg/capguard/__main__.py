"""
capguard Package Entry Point

This module allows the package to be run as a module using:
    uv run python -m capguard
    or
    python -m capguard
"""

from .cli import main

if __name__ == "__main__":
    import sys

    sys.exit(main())
