"""Robust secure resource allocation for pinching-antenna multi-waveguide downlinks.

The package models the deployment geometry (waveguides, users, eavesdroppers
and box blockages), builds near-field channels, bounds the eavesdropper CSI
error, and runs the block coordinate descent design of beamformers, artificial
noise, PA power ratios and PA positions.
"""

__version__ = "0.1.0"
