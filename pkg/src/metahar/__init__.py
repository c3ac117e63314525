"""Personalised meta-learning for few-shot human activity recognition.

First-order MAML and Relation Networks trained on person-structured
episodic tasks, a cosine-matching baseline, the sensor preprocessing
chain, and leave-one-person-out evaluation utilities, all on a small
reverse-mode autodiff over numpy.
"""

from .errors import DataError, MetaHarError, NumericError, ShapeError, TaskError

__version__ = "0.1.0"

__all__ = ["DataError", "MetaHarError", "NumericError", "ShapeError", "TaskError", "__version__"]
