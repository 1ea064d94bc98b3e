"""
CLI
The lodl command and its layered configuration.
"""

from lodl_bench.cli.main import cli, main

__all__ = ["cli", "main"]
