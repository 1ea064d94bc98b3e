"""
Artifact Database
Versioned SQLite files with a metadata table and float64 blob columns.
"""

import json
import logging
import sqlite3
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from lodl_bench.errors import FormatVersionError, MissingArtifactError, StoreError, TruncatedFileError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0  # seconds
DEFAULT_BUSY_TIMEOUT = 30000  # milliseconds
MAX_RETRIES = 3
RETRY_DELAY = 0.1  # seconds (exponential backoff base)

META_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
"""


def encode_array(values: np.ndarray) -> bytes:
    """Little-endian float64 bytes."""
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode_array(blob: bytes, shape: Sequence[int], what: str = "array") -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    if blob is None or len(blob) != expected:
        got = 0 if blob is None else len(blob)
        raise TruncatedFileError(f"{what}: expected {expected} bytes for shape {tuple(shape)}, found {got}")
    return np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(tuple(shape))


class ArtifactDB:
    """One SQLite artifact file: a kind tag, a format version and a payload schema."""

    kind = "artifact"
    format_version = 1
    schema = ""

    def __init__(self, db_path: Path, create: bool = False, use_wal: bool = True):
        """Open an artifact file, creating it when ``create`` is set."""
        self.db_path = Path(db_path)
        self.use_wal = use_wal
        if create:
            self.db_path.parent.mkdir(parents=True, exist_ok=True)
            self._init_database()
        else:
            if not self.db_path.exists():
                raise MissingArtifactError(f"missing {self.kind} file {self.db_path}")
            self._check_version()

    def _init_database(self):
        """Initialize schema and header if the file is new."""
        with self.get_connection() as conn:
            conn.executescript(META_SCHEMA + self.schema)
            row = conn.execute("SELECT value FROM meta WHERE key = 'format_version'").fetchone()
            if row is None:
                conn.execute("INSERT INTO meta (key, value) VALUES ('format_version', ?)",
                             (str(self.format_version),))
                conn.execute("INSERT INTO meta (key, value) VALUES ('kind', ?)", (self.kind,))
                logger.debug(f"Initialized {self.kind} file at {self.db_path}")
        self._check_version()

    def _check_version(self):
        try:
            with self.get_connection() as conn:
                rows = {r["key"]: r["value"] for r in conn.execute("SELECT key, value FROM meta")}
        except sqlite3.DatabaseError as e:
            raise TruncatedFileError(f"{self.kind} file {self.db_path} is unreadable: {e}")
        version = rows.get("format_version")
        if version != str(self.format_version):
            raise FormatVersionError(
                f"{self.kind} file {self.db_path} has format version {version}, expected {self.format_version}")
        if rows.get("kind") != self.kind:
            raise StoreError(f"{self.db_path} holds '{rows.get('kind')}' artifacts, not '{self.kind}'")

    @contextmanager
    def get_connection(self):
        """Get database connection with proper transaction handling."""
        conn = sqlite3.connect(str(self.db_path), timeout=DEFAULT_TIMEOUT)
        conn.row_factory = sqlite3.Row
        try:
            conn.execute(f"PRAGMA journal_mode={'WAL' if self.use_wal else 'DELETE'}")
            conn.execute(f'PRAGMA busy_timeout={DEFAULT_BUSY_TIMEOUT}')
            yield conn
            conn.commit()
        except Exception:
            conn.rollback()
            raise
        finally:
            conn.close()

    def execute_with_retry(self, operation: Callable[[sqlite3.Connection], Any],
                           max_retries: int = MAX_RETRIES) -> Any:
        """Run ``operation`` in a transaction, retrying when the file is locked."""
        last_error = None
        for attempt in range(max_retries):
            try:
                with self.get_connection() as conn:
                    return operation(conn)
            except sqlite3.OperationalError as e:
                if "locked" not in str(e).lower() and "busy" not in str(e).lower():
                    raise StoreError(f"{self.kind} file {self.db_path}: {e}")
                last_error = e
                time.sleep(RETRY_DELAY * (2 ** attempt))
            except sqlite3.DatabaseError as e:
                raise TruncatedFileError(f"{self.kind} file {self.db_path} is unreadable: {e}")
        raise StoreError(f"{self.kind} file {self.db_path} stayed locked: {last_error}")

    # Metadata

    def set_meta(self, values: Dict[str, Any]):
        def write(conn):
            for key, value in values.items():
                conn.execute("INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)", (key, json.dumps(value)))
        self.execute_with_retry(write)

    def get_meta(self, key: str, default: Optional[Any] = None) -> Any:
        row = self.execute_with_retry(
            lambda conn: conn.execute("SELECT value FROM meta WHERE key = ?", (key,)).fetchone())
        if row is None:
            return default
        return json.loads(row["value"])
