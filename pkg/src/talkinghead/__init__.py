"""Audio-driven portrait animation at desk scale.

Two stages: audio -> (3D face mesh, 6-DoF head pose) -> projected 2D
landmarks, then pose-conditioned latent diffusion with reference-image
appearance injection and a temporal motion module.  Everything runs on
numpy at small resolutions so the full pipeline is testable on a laptop.
"""

__version__ = "0.1.0"
