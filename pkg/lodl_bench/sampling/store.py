"""
Sample Table Files
SQLite persistence of sample tables with bit-exact float64 payloads.

Field order per table: instance_id, K, dim_y, dl_at_truth, then the K sample rows
and their K decision values.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional

from lodl_bench.errors import MissingArtifactError
from lodl_bench.sampling.sampler import SampleTable, SamplingConfig
from lodl_bench.storage import ArtifactDB, decode_array, encode_array

logger = logging.getLogger(__name__)

TABLES_SCHEMA = """
CREATE TABLE IF NOT EXISTS sample_tables (
    instance_id INTEGER PRIMARY KEY,
    k INTEGER NOT NULL,
    dim_y INTEGER NOT NULL,
    dl_at_truth REAL NOT NULL,
    maximize INTEGER NOT NULL,
    oracle_calls INTEGER NOT NULL,
    change_rate REAL NOT NULL,
    y_true BLOB NOT NULL,
    samples BLOB NOT NULL,
    losses BLOB NOT NULL
);
"""


class SampleStore(ArtifactDB):
    """A file holding the sample tables of one (dataset, sampling config) pair."""

    kind = "sample-tables"
    format_version = 1
    schema = TABLES_SCHEMA

    def put(self, table: SampleTable):
        row = (table.instance_id, table.size, table.dim_y, table.dl_at_truth, int(table.maximize),
               table.oracle_calls, table.decision_change_rate, encode_array(table.y_true),
               encode_array(table.samples), encode_array(table.losses))
        self.execute_with_retry(lambda conn: conn.execute(
            "INSERT OR REPLACE INTO sample_tables VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)", row))

    def put_many(self, tables: List[SampleTable], config: SamplingConfig, extra_meta: Optional[Dict] = None):
        for table in tables:
            self.put(table)
        meta = {"sampling_config": config.to_dict()}
        meta.update(extra_meta or {})
        self.set_meta(meta)

    def instance_ids(self) -> List[int]:
        rows = self.execute_with_retry(
            lambda conn: conn.execute("SELECT instance_id FROM sample_tables ORDER BY instance_id").fetchall())
        return [r["instance_id"] for r in rows]

    def config(self) -> Optional[SamplingConfig]:
        raw = self.get_meta("sampling_config")
        return SamplingConfig(**raw) if raw else None

    def get(self, instance_id: int) -> SampleTable:
        row = self.execute_with_retry(lambda conn: conn.execute(
            "SELECT * FROM sample_tables WHERE instance_id = ?", (instance_id,)).fetchone())
        if row is None:
            raise MissingArtifactError(f"missing sample table for instance {instance_id} in {self.db_path}")
        return self._from_row(row)

    def get_all(self) -> List[SampleTable]:
        rows = self.execute_with_retry(
            lambda conn: conn.execute("SELECT * FROM sample_tables ORDER BY instance_id").fetchall())
        return [self._from_row(row) for row in rows]

    def _from_row(self, row) -> SampleTable:
        k, dim = row["k"], row["dim_y"]
        where = f"instance {row['instance_id']} in {self.db_path}"
        return SampleTable(
            instance_id=row["instance_id"],
            y_true=decode_array(row["y_true"], (dim,), f"labels of {where}"),
            samples=decode_array(row["samples"], (k, dim), f"samples of {where}"),
            losses=decode_array(row["losses"], (k,), f"decision values of {where}"),
            dl_at_truth=float(row["dl_at_truth"]),
            maximize=bool(row["maximize"]),
            oracle_calls=row["oracle_calls"],
            decision_change_rate=float(row["change_rate"]),
            config=self.config(),
        )


def write_table(path: Path, table: SampleTable) -> Path:
    """Write a single table to its own file (replacing any previous file atomically)."""
    path = Path(path)
    temp_path = path.with_name(path.name + ".tmp")
    if temp_path.exists():
        temp_path.unlink()
    store = SampleStore(temp_path, create=True, use_wal=False)
    store.put_many([table], table.config or SamplingConfig())
    os.replace(temp_path, path)
    return path


def read_table(path: Path, instance_id: Optional[int] = None) -> SampleTable:
    """Read one table; ``instance_id`` selects it when the file holds several."""
    store = SampleStore(Path(path))
    if instance_id is None:
        ids = store.instance_ids()
        if not ids:
            raise MissingArtifactError(f"no sample tables in {path}")
        instance_id = ids[0]
    return store.get(instance_id)
