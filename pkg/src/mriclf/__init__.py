"""Voxel-based MRI classification: linear SVM and 3D CNN baselines with resampling statistics."""

__version__ = "0.1.0"
