"""Steering-vector toolkit: bundle and vector I/O, HSR, injection."""

from ._core import (
    SdlsError,
    default_dictionary_json,
    global_icv,
    hsc,
    hsr,
    load_vector,
    norm_preserving_inject,
    read_bundle,
    sdiv,
    tokenize,
    write_bundle,
)

__all__ = [
    "SdlsError",
    "default_dictionary_json",
    "global_icv",
    "hsc",
    "hsr",
    "load_vector",
    "norm_preserving_inject",
    "read_bundle",
    "sdiv",
    "tokenize",
    "write_bundle",
]
__version__ = "0.1.0"
