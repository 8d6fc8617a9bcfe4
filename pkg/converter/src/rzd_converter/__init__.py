"""Convert MATLAB GZSL benchmark archives into RZD v1 dataset directories."""

from .convert import (ConversionError, SourceArchive, VerificationError,
                      convert, verify_against_source)

__all__ = ["ConversionError", "SourceArchive", "VerificationError",
           "convert", "verify_against_source"]
