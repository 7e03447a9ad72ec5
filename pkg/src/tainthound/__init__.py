"""Staged agent pipeline for detecting and confirming taint-style
vulnerabilities (command injection, code injection, path traversal,
prototype pollution) in Node.js packages.

Candidate findings are enumerated by a Finder agent, filtered by a Judge,
augmented with exploitation constraints, and finally confirmed by an
Exploiter whose generated proof-of-concept code runs in a sandbox under
class-specific execution oracles.
"""

__version__ = "0.1.0"
