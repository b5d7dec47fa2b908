#!/usr/bin/env python3
"""Run the SurveyAlloc command line from a source checkout"""
import sys
from pathlib import Path

# src/ holds the importable packages
project_root = Path(__file__).parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from cli.main import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run())
