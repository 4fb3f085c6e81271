"""Per-image symmetry annotation of object pose datasets and symmetry-aware pose evaluation."""

from .annotate import InstanceDistribution, annotate_instance, soft_intersect
from .candidates import CandidateSet, SymmetrySpec, build_candidates
from .geom import CameraModel, PointSet, RigidTransform, SurfaceIndex
from .mesh import TriangleMesh, read_ply, sample_surface
from .metrics import mpd, mspd, msd, mssd
from .patterns import PatternTable, precompute_patterns

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "CandidateSet", "InstanceDistribution", "PatternTable", "PointSet",
    "RigidTransform", "SurfaceIndex", "SymmetrySpec", "TriangleMesh", "annotate_instance",
    "build_candidates", "mpd", "mspd", "msd", "mssd", "precompute_patterns", "read_ply",
    "sample_surface", "soft_intersect",
]
