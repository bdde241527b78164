#!/usr/bin/env python3
"""
voxeldetkit - command-line entry point.

Equivalent to the installed ``voxeldet`` script; see src/cli/main.py.
"""
import sys

from src.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
