#!/usr/bin/env python3
"""
ampzoo Entry Point

This script runs the ampzoo command-line application.
"""

import sys

from main import main

if __name__ == "__main__":
    sys.exit(main())
