"""Render error-rate figures from simulation result CSVs.

Post-processing only: reads the documented harness CSV schema and draws
one marker-line per (coding, parameter) combination, exactly as stored.
"""

__version__ = "0.1.0"

from .figures import SchemaError, load_result_rows, plot_error_vs_axis

__all__ = ["SchemaError", "load_result_rows", "plot_error_vs_axis"]
