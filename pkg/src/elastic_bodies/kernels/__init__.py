"""Hot per-face kernels, dispatched to numba or numpy (see ``_backend``)."""

from .._backend import requested_backend

BACKEND = requested_backend()

if BACKEND == "numba":
    from ._numba import backprop, face_geometry, metric_terms, normal_terms
else:
    from ._numpy import backprop, face_geometry, metric_terms, normal_terms

__all__ = ["BACKEND", "backprop", "face_geometry", "metric_terms", "normal_terms"]
