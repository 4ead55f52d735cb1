"""Numerical Finsler geometry on a single chart: geodesics, orthogonal cones,
non-symmetric distances, cut values, focal instants and tubular neighbourhoods."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .cut import CutResult, NormalFan, cut_value, sample_cut_locus
from .distance import DistanceField, GridGraph, ball_membership, build_field, distance_from_submanifold
from .errors import (
    ConditioningError,
    DegenerateVectorError,
    DomainError,
    FinslerError,
    HorizonError,
    ImmersionError,
    InversionError,
    NonConvexMetricError,
)
from .focal import FocalResult, focal_instant
from .geodesic import Curve, GeodesicPath, d_exp, energy, euler_lagrange_residual, exp_map, length, shoot
from .metric import (
    Chart,
    CustomMetric,
    FinslerMetric,
    MinkowskiMetric,
    RandersMetric,
    RiemannianMetric,
    StereographicSphere,
    euclidean,
    reverse,
    reversibility_constant,
)
from .normal import (
    Covector,
    NormalVariation,
    NormalVector,
    annihilator_basis,
    build_orthogonal_frame,
    closest_foot_point,
    exp_submanifold,
    legendre,
    legendre_inverse,
    orthogonality_residual,
    sample_unit_normals,
    unit_normal_cone,
)
from .submanifold import (
    CircleSubmanifold,
    CustomImmersion,
    GraphSubmanifold,
    LineSubmanifold,
    PointSubmanifold,
    Submanifold,
)
from .tube import TubeReport, Verification, estimate_tube_radius, verify_smooth_distance, verify_tube

__all__ = [name for name in dir() if not name.startswith("_")]
