"""Reference inference backend for the generation wire protocol.

Serves ``/v1/health``, ``/v1/generate`` (diffusion with ControlNet
conditioning), and ``/v1/embed`` (face embeddings). Heavy ML engines load
lazily and are optional; a deterministic procedural engine keeps the
protocol surface fully testable on any machine.
"""

__version__ = "0.1.0"
