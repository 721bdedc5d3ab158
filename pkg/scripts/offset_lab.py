#!/usr/bin/env python3
"""
Run the offset_lab command-line front end from a source checkout.

Usage:
  python scripts/offset_lab.py bound --config configs/sh_allones.json
  python scripts/offset_lab.py erm --config configs/demo_bounded.json --out runs/demo.json
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from offset_lab.cli import main


if __name__ == '__main__':
    main()
