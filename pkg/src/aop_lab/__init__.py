"""aop-lab: adjective-order preference evaluation toolkit.

Builds minimal-pair corpora of double-adjective noun phrases, scores
order preference under pluggable language-model scorers, computes
cognitive-predictor and corpus-statistics baselines, and emits the
correlation/accuracy/quadrant analyses.
"""

__version__ = "0.1.0"
