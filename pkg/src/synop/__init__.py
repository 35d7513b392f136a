"""Wiring diagrams for operator networks: syntax, coherence checking and matrix semantics."""

from .diagram import (Atom, Ctrl, Dagger, Diagram, DiagramTypeError, Feedback, Id, Involute, Neutral,
                      Perm, Permutation, PortGraph, Seq, Signature, SpaceRef, Star, Tensor, Token,
                      sig, to_port_graph, typecheck)
from .dsl import ParseError, SourceProgram, parse, print_program
from .rewrite import (CanonicalForm, Equal, Inequivalent, SignatureMismatch, Unknown, canonicalize,
                      equiv, from_port_graph, normalize_control, push_dagger)
from .semantics import (ControlMonoid, Environment, IllPosedFeedback, OperatorValue, SingularLoop,
                        UnboundAtom, UnboundToken, evaluate)

__all__ = [
    "Atom", "Ctrl", "Dagger", "Diagram", "DiagramTypeError", "Feedback", "Id", "Involute", "Neutral",
    "Perm", "Permutation", "PortGraph", "Seq", "Signature", "SpaceRef", "Star", "Tensor", "Token",
    "sig", "to_port_graph", "typecheck",
    "ParseError", "SourceProgram", "parse", "print_program",
    "CanonicalForm", "Equal", "Inequivalent", "SignatureMismatch", "Unknown", "canonicalize", "equiv",
    "from_port_graph", "normalize_control", "push_dagger",
    "ControlMonoid", "Environment", "IllPosedFeedback", "OperatorValue", "SingularLoop", "UnboundAtom",
    "UnboundToken", "evaluate",
]
