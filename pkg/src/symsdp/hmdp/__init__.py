"""Hybrid MDP models, the domain-file format and the built-in domains."""

from .domains import BUILTIN_NAMES, builtin_domain, caic_text, domain_text, shipped_text
from .model import (
    ActionSchema,
    HmdpModel,
    ValidationError,
    build_model,
    discretize_actions,
    grid_values,
    parse_domain,
    validate,
)
from .parser import DomainError, DomainFile, ParseError, parse_domain_file, render_domain

__all__ = [
    "ActionSchema", "BUILTIN_NAMES", "DomainError", "DomainFile", "HmdpModel", "ParseError",
    "ValidationError", "build_model", "builtin_domain", "caic_text", "discretize_actions",
    "domain_text", "grid_values", "parse_domain", "parse_domain_file", "render_domain",
    "shipped_text", "validate",
]
