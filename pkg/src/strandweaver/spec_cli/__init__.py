"""Specification language and command-line front end."""

from .parser import (
    AttackSpec,
    ResolutionError,
    SpecFile,
    SpecSyntaxError,
    parse_items,
    parse_process,
    parse_spec,
    parse_strand_spec,
    parse_term,
    print_spec,
    print_strand_spec,
)

__all__ = [
    "AttackSpec", "ResolutionError", "SpecFile", "SpecSyntaxError", "parse_items",
    "parse_process", "parse_spec", "parse_strand_spec", "parse_term", "print_spec",
    "print_strand_spec",
]
