"""Polarimetric deflectometry toolkit.

Simulates display/camera measurements of specular surfaces with a
polarization camera and reconstructs per-pixel depth and normals by
fusing degree-of-polarization incidence angles with the decoded
display correspondence.
"""

__version__ = "0.1.0"
