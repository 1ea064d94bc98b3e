"""
Storage
SQLite-backed artifact files for sample tables and fitted losses.
"""

from lodl_bench.storage.db import ArtifactDB, decode_array, encode_array

__all__ = ["ArtifactDB", "decode_array", "encode_array"]
