"""Allow ``python -m emr`` as an alternative to the ``emr`` script."""

from .cli import main

main()
