# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#

import asyncio
import errno
import fcntl
import hashlib
import os
import secrets
import tempfile
from collections.abc import AsyncGenerator, Iterator
from contextlib import asynccontextmanager, contextmanager, suppress
from datetime import datetime, timezone
from pathlib import Path
from typing import IO

from rich.console import Console
from rich.live import Live
from rich.spinner import Spinner as RichSpinner

from thema.errors import FileLockingError

DEFAULT_FLOCK_WAIT_INTERVAL = 5
LOCK_FILE_NAME = ".thema.lock"


def _try_flock(lock_file: IO[str]) -> bool:
    try:
        fcntl.flock(lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError as e:
        if e.errno in (errno.EAGAIN, errno.EACCES):
            return False
        raise
    return True


@asynccontextmanager
async def lock_run(
    run_path: str | Path,
    *,
    console: Console | None = None,
    wait_interval: float | None = DEFAULT_FLOCK_WAIT_INTERVAL,
) -> AsyncGenerator[None, None]:
    """
    Hold an exclusive lock on a run directory

    The directory is created if necessary and the lock is taken on its
    lock file, so a single thema process writes to a run at a time.

    Arguments:
        run_path: Run directory to lock
        console: Console for lock progress messages or None to stay quiet
        wait_interval: Seconds to sleep between attempts while another
            process holds the lock. None raises a FileLockingError at once.
    """
    run_path = Path(run_path)

    def report(message: str) -> None:
        if console:
            console.print(message)

    try:
        run_path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileLockingError(f"Can't create run directory {run_path}") from e

    lock_path = run_path / LOCK_FILE_NAME
    try:
        lock_file = lock_path.open("w", encoding="utf-8")
    except PermissionError as e:
        raise FileLockingError(f"Can't open lock file {lock_path}") from e

    with lock_file:
        report(f"Locking run {run_path}")
        while not _try_flock(lock_file):
            if wait_interval is None:
                raise FileLockingError(
                    f"Run {run_path} is locked. Another thema process may "
                    "already write to this run."
                )
            report(f"Run {run_path} is busy, retrying in {wait_interval:g}s")
            await asyncio.sleep(wait_interval)
        report(f"Locked run {run_path}")

        try:
            yield
        finally:
            with suppress(OSError):
                fcntl.flock(lock_file, fcntl.LOCK_UN)
            report(f"Unlocked run {run_path}")


@contextmanager
def spinner(console: Console, status: str) -> Iterator[None]:
    """
    Show an animated status line while the block runs
    """
    live = Live(
        RichSpinner("dots", text=status, style="status.spinner"),
        console=console,
        refresh_per_second=12.5,
    )
    live.start()
    try:
        yield
    finally:
        live.stop()


def atomic_write_text(path: str | Path, content: str) -> Path:
    """
    Write text to a file via a temporary sibling and a rename

    Readers never observe a partially written file. Newlines are written
    as given.

    Args:
        path: Destination file
        content: Text to write as UTF-8
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{path.name}.", suffix=".tmp", dir=path.parent
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(content)
        Path(tmp_name).replace(path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise

    return path


def fingerprint(text: str) -> str:
    """
    Stable sha256 hex digest of a text
    """
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_run_id(now: datetime | None = None) -> str:
    """
    Create a run id from a UTC timestamp and a random suffix
    """
    now = now or datetime.now(timezone.utc)
    return f"{now.strftime('%Y%m%dT%H%M%SZ')}-{secrets.token_hex(3)}"


def word_count(text: str) -> int:
    return len(text.split())


def format_temperature(temperature: float) -> str:
    """
    Format a temperature for file names, e.g. 0.25 -> "0.25", 0.0 -> "0"
    """
    return f"{temperature:g}"
