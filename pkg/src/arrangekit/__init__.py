"""Constraint-based 3D object arrangement: visual probing, differentiable
constraint losses, a sampling pose solver, physical validators and a
backtracking plan search."""

from .constraints import (
    BackTo,
    CloseToPix,
    ConstraintSet,
    Contact,
    Distance,
    FaceTo,
    LossWeights,
    NoOverhang,
    Rotate,
    total_loss,
)
from .errors import ArrangeError, SearchExhausted, SolveFailed, StepFailed
from .kernels import compiled_available, use_backend
from .mesh import TriMesh, box, load_obj
from .probe import PlanarSurface, ProbeHit, list_objects_in_area, ray_probe, render_with_highlight
from .raster import render_color, render_instance_map
from .scene import Camera, ObjectInstance, Pose, Scene, apply_pose, load_scene, make_scene
from .search import SearchConfig, SearchResult, adaptive_backtracking, search
from .solver import PoseSolution, SolverConfig, solve
from .validate import check_collision, check_floating, compute_metrics

__version__ = "0.1.0"
