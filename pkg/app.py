"""
MiLa experiments - entry point.

Meta-imitation learning of reach, place and push from unsegmented
demonstrations on a planar simulator. See ``python app.py --help``.
"""

import sys

from dotenv import load_dotenv

from src.interface.cli.main import main

load_dotenv()

if __name__ == "__main__":
    sys.exit(main())
