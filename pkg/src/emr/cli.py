"""Operator command line.

Every verb is non-interactive and prints one plain-text result per line.
Exit codes: 0 success, 1 expected domain failure (printed without a
traceback), 2 usage errors (unknown verb, bad flags -- click's default).
``--data-dir`` and ``--port`` fall back to EMR_DATA_DIR / EMR_PORT;
explicit flags win over the environment.
"""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click

from .access import AccessControl
from .api import ApiConfig, DEFAULT_DATA_DIR, DEFAULT_PORT, serve as run_server
from .errors import EmrError
from .seeds import import_archetype_dir, load_registry, seed_references
from .store import RecordStore

_DATA_DIR_OPTION = click.option(
    "--data-dir",
    "data_dir",
    type=click.Path(path_type=Path),
    default=DEFAULT_DATA_DIR,
    envvar="EMR_DATA_DIR",
    show_default=True,
    help="Directory holding the record journal.",
)


def _domain_errors(fn):
    """Expected failures become a one-line message and exit code 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EmrError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
def main() -> None:
    """Operate a clinic EMR service."""


@main.command()
@_DATA_DIR_OPTION
@click.option(
    "--port",
    type=int,
    default=DEFAULT_PORT,
    envvar="EMR_PORT",
    show_default=True,
    help="HTTP listen port.",
)
@_domain_errors
def serve(data_dir: Path, port: int) -> None:
    """Run the HTTP API server."""
    ttl = float(os.environ.get("EMR_SESSION_TTL_HOURS", "12"))
    run_server(ApiConfig(data_dir=data_dir, session_ttl_hours=ttl), port=port)


@main.command("init-admin")
@_DATA_DIR_OPTION
@click.option("--username", default="admin", show_default=True,
              help="Login name for the administrator account.")
@_domain_errors
def init_admin(data_dir: Path, username: str) -> None:
    """Create an administrator with a generated one-time password."""
    store = RecordStore(data_dir)
    access = AccessControl(store)
    user, password = access.bootstrap_admin(username)
    click.echo(f"admin user created: {user.username} ({user.user_id})")
    click.echo(f"one-time password: {password}")


@main.command("seed-references")
@_DATA_DIR_OPTION
@_domain_errors
def seed_references_cmd(data_dir: Path) -> None:
    """Insert the built-in reference items (idempotent)."""
    store = RecordStore(data_dir)
    added, existing = seed_references(store)
    click.echo(f"reference items: {added} added, {existing} existing")


@main.command("import-archetypes")
@_DATA_DIR_OPTION
@click.option(
    "--dir",
    "directory",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Directory of *.adsl files [default: the bundled definitions].",
)
@_domain_errors
def import_archetypes(data_dir: Path, directory: Path | None) -> None:
    """Register archetype definition files (idempotent)."""
    store = RecordStore(data_dir)
    registry = load_registry(store)
    for archetype_id, outcome in import_archetype_dir(store, registry, directory):
        click.echo(f"{outcome} {archetype_id}")


@main.command("export-snapshot")
@_DATA_DIR_OPTION
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True,
              help="Snapshot file to write.")
@_domain_errors
def export_snapshot(data_dir: Path, out_path: Path) -> None:
    """Write the full store (records and audit chain) to one file."""
    store = RecordStore(data_dir)
    records, events = store.export_snapshot(out_path)
    click.echo(f"exported {records} records and {events} audit events to {out_path}")


@main.command("import-snapshot")
@_DATA_DIR_OPTION
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True, help="Snapshot file to load.")
@_domain_errors
def import_snapshot(data_dir: Path, in_path: Path) -> None:
    """Load a snapshot into an empty data directory."""
    store = RecordStore(data_dir)
    records, events = store.import_snapshot(in_path)
    click.echo(f"imported {records} records and {events} audit events from {in_path}")


@main.command("verify-audit")
@_DATA_DIR_OPTION
@_domain_errors
def verify_audit(data_dir: Path) -> None:
    """Recompute the audit hash chain and report the first bad event."""
    store = RecordStore(data_dir)
    result = store.verify_audit()
    if result.ok:
        click.echo(f"audit chain: ok ({store.audit_count()} events)")
    else:
        click.echo(f"audit chain: corrupt at seq {result.first_bad_seq}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
