"""Multi-view conditioning utilities: clip curation, visual conditions, depth alignment and warping."""

from .camgeo import Camera, forward_warp, project, reproject_pixel, unproject
from .errors import DomainError

__all__ = ["Camera", "DomainError", "forward_warp", "project", "reproject_pixel", "unproject"]
__version__ = "0.1.0"
