"""2D incompressible flow with sharp immersed interfaces.

Subpackages build up from the interface representation (meshes, bases,
projections) through jump conditions, staggered-grid operators and
stencil corrections, to the full time stepper and benchmark harness.
"""

from .interface_mesh import (
    BasisKind,
    BasisSpec,
    InterfaceMesh,
    QuadratureRule,
    SurfaceField,
    SurfaceProjector,
    build_polyline,
    element_normal,
    element_stretch,
    eval_field,
    gauss_rule,
    merge_meshes,
    project,
    quad_points,
)

__version__ = "0.1.0"
