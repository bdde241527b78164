"""
voxeldetkit: image-to-voxel 3D detection toolkit
"""

__version__ = '0.1.0'
