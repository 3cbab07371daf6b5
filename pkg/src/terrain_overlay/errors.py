"""Exception hierarchy shared by every pipeline stage."""


class OverlayError(Exception):
    """Base class for all errors raised by terrain_overlay."""


class ParseError(OverlayError):
    """The GeoJSON text is not valid JSON or not structurally GeoJSON."""


class UnsupportedGeometry(OverlayError):
    """A geometry type other than Polygon/MultiPolygon was encountered."""


class DegenerateRing(OverlayError):
    """A ring has fewer than three distinct vertices or zero area."""


class UnclosedRing(OverlayError):
    """A ring's first and last positions differ."""


class DuplicateRegionId(OverlayError):
    """Two polygons in one RoiSet resolved to the same region id."""


class NonInvertibleTransform(OverlayError):
    """The world/CRS affine map has a (near) singular linear part."""


class TriangulationFailure(OverlayError):
    """Cap triangulation failed, typically because a ring self-intersects."""


class OpenMesh(OverlayError):
    """A shape mesh is not a closed 2-manifold, so parity is undefined."""


class CameraInsideSolid(OverlayError):
    """The camera sits inside an extruded shape mesh."""


class MissingStyle(OverlayError):
    """A region id present in a texture or mask has no style."""


class DimensionMismatch(OverlayError):
    """Two masks or images that must align have different shapes."""


class InsufficientData(OverlayError):
    """Too few distinct overlay counts to fit a line."""


class ConfigError(OverlayError):
    """A scene or bench configuration failed validation."""
