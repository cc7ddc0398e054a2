"""Elastic shape analysis of template-registered triangle meshes.

Bodies are compared through their per-face induced metric and unit normal
with the ``(a, lambda, c)`` family of elastic distances; the package also
computes discrete geodesic paths, Karcher means and retrieval scores.
"""

from .errors import (
    ConfigError,
    DegenerateFaceError,
    ElasticError,
    InputError,
    MeshFormatError,
    NumericalError,
    TopologyMismatchError,
)
from .geodesic import (
    DeformationBasis,
    GeodesicPath,
    build_basis,
    compute_geodesic,
    export_path,
    load_basis,
    path_energy,
    save_basis,
)
from .karcher import KarcherProblem, compute_karcher_mean, karcher_objective
from .kernels import BACKEND
from .mesh import (
    FaceGeometry,
    RegisteredMesh,
    TemplateTopology,
    extract_geometry,
    face_frames,
    face_normals,
    first_fundamental_form,
    load_mesh,
    save_mesh,
)
from .metric import (
    MetricParams,
    PointwiseDistanceBreakdown,
    body_distance_sq,
    distance,
    distance_matrix,
    normal_distance_sq,
    pointwise_metric_distance_sq,
)
from .optim import OptimConfig, OptimReport, check_gradient, minimize
from .retrieval import LabeledDistanceMatrix, evaluate_retrieval, run_retrieval_experiment
from .synth import SynthSpec, generate_corpus, generate_sequence

__version__ = "0.1.0"
