"""
Fitted Loss Files
One SQLite file per (sample tables, family, fit config) holding a loss for every instance.
"""

import json
import logging
from typing import Dict, List, Optional

import numpy as np

from lodl_bench.errors import MissingArtifactError, TruncatedFileError
from lodl_bench.losses.families import LossParams, flatten, scalar_fields, unflatten
from lodl_bench.storage import ArtifactDB, decode_array, encode_array

logger = logging.getLogger(__name__)

LOSSES_SCHEMA = """
CREATE TABLE IF NOT EXISTS fitted_losses (
    instance_id INTEGER NOT NULL,
    family TEXT NOT NULL,
    shapes TEXT NOT NULL,
    extra TEXT NOT NULL,
    n_values INTEGER NOT NULL,
    params BLOB NOT NULL,
    y_true BLOB NOT NULL,
    final_objective REAL,
    steps INTEGER,
    PRIMARY KEY (instance_id, family)
);
"""


class LossStore(ArtifactDB):
    """Fitted losses keyed by (instance, family), each shipped with its label."""

    kind = "fitted-losses"
    format_version = 1
    schema = LOSSES_SCHEMA

    def put(self, instance_id: int, params: LossParams, y_true: np.ndarray):
        shapes, values = flatten(params)
        extra = scalar_fields(params)
        extra["info"] = {k: v for k, v in params.info.items() if k != "curve"}
        row = (instance_id, params.family, json.dumps(shapes), json.dumps(extra), int(values.size),
               encode_array(values), encode_array(np.reshape(y_true, -1)),
               params.info.get("final_objective"), params.info.get("steps"))
        self.execute_with_retry(lambda conn: conn.execute(
            "INSERT OR REPLACE INTO fitted_losses VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)", row))

    def put_many(self, fitted: Dict[int, LossParams], labels: Dict[int, np.ndarray],
                 meta: Optional[Dict] = None):
        for instance_id, params in fitted.items():
            self.put(instance_id, params, labels[instance_id])
        if meta:
            self.set_meta(meta)

    def families(self) -> List[str]:
        rows = self.execute_with_retry(
            lambda conn: conn.execute("SELECT DISTINCT family FROM fitted_losses ORDER BY family").fetchall())
        return [r["family"] for r in rows]

    def get(self, instance_id: int, family: str) -> LossParams:
        params, _ = self.get_with_label(instance_id, family)
        return params

    def get_with_label(self, instance_id: int, family: str):
        row = self.execute_with_retry(lambda conn: conn.execute(
            "SELECT * FROM fitted_losses WHERE instance_id = ? AND family = ?", (instance_id, family)).fetchone())
        if row is None:
            raise MissingArtifactError(f"missing fitted {family} loss for instance {instance_id} in {self.db_path}")
        return self._from_row(row)

    def get_family(self, family: str) -> Dict[int, LossParams]:
        rows = self.execute_with_retry(lambda conn: conn.execute(
            "SELECT * FROM fitted_losses WHERE family = ? ORDER BY instance_id", (family,)).fetchall())
        return {row["instance_id"]: self._from_row(row)[0] for row in rows}

    def labels(self, family: str) -> Dict[int, np.ndarray]:
        rows = self.execute_with_retry(lambda conn: conn.execute(
            "SELECT * FROM fitted_losses WHERE family = ? ORDER BY instance_id", (family,)).fetchall())
        return {row["instance_id"]: self._from_row(row)[1] for row in rows}

    def _from_row(self, row):
        where = f"{row['family']} loss of instance {row['instance_id']} in {self.db_path}"
        shapes = json.loads(row["shapes"])
        values = decode_array(row["params"], (row["n_values"],), f"parameters of {where}")
        expected = sum(int(np.prod(shape)) for shape in shapes)
        y_true = np.frombuffer(row["y_true"], dtype="<f8").astype(np.float64)
        if values.size != expected:
            raise TruncatedFileError(f"parameters of {where}: expected {expected} values, found {values.size}")
        return unflatten(row["family"], shapes, values, json.loads(row["extra"])), y_true
