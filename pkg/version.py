"""
version.py - Single source of truth for the package version and branding.

History:
  v0.1.0 - Digital-DNA encoding (type and content alphabets), JSONL corpus
           ingestion with eligibility filter, balancing and stratified
           splits.
  v0.2.0 - DNA-to-image rendering (shared canvas, palettes, 256×256
           nearest-neighbour resize, PNG + BDNA1 dumps); LCS-curve group
           detector.
  v0.3.0 - float64 reverse-mode engine; concat / GMU / cross-modal heads
           over toy and precomputed encoders; seeded multi-run protocol with
           mean ± std reports; BWTS1 checkpoints.
"""

__version__  = "0.3.0"
__app_name__ = "botdna"
__org_name__ = "Long Weekend Labs"
__copyright__ = "© 2026 Long Weekend Labs"
