"""Temporal question answering with explicit timelines and self-checks.

Contexts are parsed into dated facts that a deterministic solver can answer
from. A generation loop asks a backend for tagged traces and re-prompts until
the trace's timeline and reflection pass their checks. Traces whose answer
matches gold become training data, and answers are scored with exact match
and token F1.
"""

__version__ = "0.1.0"

from .contexts import ParsedContext, detect_format, parse_context, render_context
from .errors import TiserError
from .evaluation import aggregate, exact_match, normalize_answer, token_f1, token_overhead
from .pipeline import PipelineConfig, PipelineResult, run, run_batch
from .solver import SolverAnswer, classify_question, solve
from .temporal import TemporalFact, Timeline, TimePoint, build_timeline, check_consistency
from .traces import PromptSpec, Trace, parse_trace, render_prompt, validate_trace

__all__ = [
    "ParsedContext",
    "PipelineConfig",
    "PipelineResult",
    "PromptSpec",
    "SolverAnswer",
    "TemporalFact",
    "TimePoint",
    "Timeline",
    "TiserError",
    "Trace",
    "aggregate",
    "build_timeline",
    "check_consistency",
    "classify_question",
    "detect_format",
    "exact_match",
    "normalize_answer",
    "parse_context",
    "parse_trace",
    "render_context",
    "render_prompt",
    "run",
    "run_batch",
    "solve",
    "token_f1",
    "token_overhead",
    "validate_trace",
]
