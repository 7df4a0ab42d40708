"""
Command-line entry point for Sequoia Lab.

Usage:
    python app.py plan --acceptance p.json --budget 64 --out plan.json
    python app.py --help
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
