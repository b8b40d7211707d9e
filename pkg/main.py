"""
crlearn entry point
Usage: python main.py <generate|run|analyze|show-preset> [--config PATH] [--seed U64] [--jobs N] [--out DIR]
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
