"""Relightable portrait animation at desk scale.

Blendshape head meshes are shaded with second-order spherical-harmonics
lighting into shading hints, mapped by conv adapters into guidance features,
and used to steer deterministic DDIM sampling with two-condition guidance.
"""

__version__ = "0.1.0"
