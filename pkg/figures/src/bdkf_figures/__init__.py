"""Plot scripts for the bdkf study CSVs.

These scripts only aggregate (means over seeds, least-squares slope fits)
and draw; they never recompute any filter quantities. Input is always a CSV
produced by the bdkf command line, output an SVG (default) or PNG image.
"""

__version__ = "0.1.0"
