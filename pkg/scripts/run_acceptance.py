#!/usr/bin/env python3
"""Run the acceptance suite and print one pass/fail line per criterion.

Usage: ``python3 scripts/run_acceptance.py [extra pytest args]``
"""
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    suite = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
    sys.exit(pytest.main([str(suite), "-q", *sys.argv[1:]]))
