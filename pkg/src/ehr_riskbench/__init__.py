"""EHR risk-prediction workbench.

Cohort construction from longitudinal diagnosis records, classical baselines,
a frozen-sentence-embedding transformer, an LLM prompt/probability-extraction
adapter, and an evaluation harness with paired-bootstrap comparisons.
"""

__version__ = "0.1.0"
