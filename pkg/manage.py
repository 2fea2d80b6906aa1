#!/usr/bin/env python
"""Run scarbasis subcommands: ``./manage.py run --config config/run.json``."""
import sys

from scarbasis.__main__ import main

if __name__ == "__main__":
    main(sys.argv)
