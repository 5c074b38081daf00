"""aop-scorer-shim: reference external scorer for the aop-lab wire protocol.

Loads a causal language model (any transformers checkpoint, including
intermediate revisions) and serves per-token log-probabilities with exact
character offsets over stdio or TCP.
"""

__version__ = "0.1.0"
