#!/usr/bin/env python3
"""
Entry point script for the LitePath command-line interface.
"""

import sys
from litepath.main import main

if __name__ == "__main__":
    sys.exit(main())
