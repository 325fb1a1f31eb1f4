# app.py
"""
Punto de entrada del estimador multinivel híbrido.

Uso:
    python app.py calibrate-machine --model models/decay.json
    python app.py calibrate --model models/decay.json --tol 1e-2
    python app.py estimate --model models/decay.json --plan artifacts/plan.json
"""

import sys

from modules.cli import main

if __name__ == "__main__":
    sys.exit(main())
