"""Decentralized attribute-based delegation on a pluggable name system."""
from __future__ import annotations

from . import core, delegation, credential, namestore, netsim, discovery, authz

__all__ = [
    "core",
    "delegation",
    "credential",
    "namestore",
    "netsim",
    "discovery",
    "authz",
]

__version__ = "0.1.0"
