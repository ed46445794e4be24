import sys
from pathlib import Path

# Make shared test helpers (oracles.py) importable from every test module.
sys.path.insert(0, str(Path(__file__).parent))
