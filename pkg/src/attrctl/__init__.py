"""Multi-attribute controlled text generation.

Token-level fusion of attribute priors, energy-guided iterative rewriting,
and the experiment harness around them.
"""

__version__ = "0.1.0"
