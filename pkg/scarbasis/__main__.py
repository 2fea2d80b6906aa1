"""``python -m scarbasis <subcommand>``: hyphenated subcommand names map to management commands."""

import os
import sys


def main(argv=None):
    argv = list(sys.argv if argv is None else argv)
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "scarbasis.settings")
    from django.core.management import execute_from_command_line

    if len(argv) > 1 and not argv[1].startswith("-"):
        argv[1] = argv[1].replace("-", "_")
    argv[0] = "scarbasis"
    execute_from_command_line(argv)


if __name__ == "__main__":
    main()
