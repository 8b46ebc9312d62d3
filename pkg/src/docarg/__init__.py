"""Document-level event argument extraction with co-occurrence and
structure-aware prefixes, span-selection decoding, and SFT prompt export."""

__version__ = "0.1.0"
