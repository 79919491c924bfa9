"""Synthetic identity dataset factory and verification-analysis harness.

Pipeline stages: name pools -> balanced identity plan -> prompt bundles ->
backend generation (wire protocol, resumable manifest) -> embeddings
(service, file import, or deterministic oracle) -> score-distribution
analysis and report bundle. See the CLI (``sig --help``) for the
end-to-end workflow.
"""

__version__ = "0.1.0"
