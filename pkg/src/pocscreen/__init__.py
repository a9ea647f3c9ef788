"""Offline-first point-of-care anemia screening platform.

Subsystems:
  imaging   - ROI extraction, color normalization, color-statistic features
  balance   - hemoglobin labeling and KDE-weighted undersampling
  models    - CART / random forest / gradient boosting / linear regressors
  evaluate  - metrics, cross-validation, model survey, latency benchmarks
  vault     - AES-256-CBC record-level encrypted store
  access    - users, roles, sessions, audit
  service   - REST API, sync protocol, anonymized export
  cli       - operator command line
"""

__version__ = "0.1.0"
