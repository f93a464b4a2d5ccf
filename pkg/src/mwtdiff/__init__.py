"""Desk-scale latent diffusion super-resolution for satellite imagery.

The model upscales low-resolution scenes by denoising in the latent space
of a small convolutional autoencoder, steered by a conditioning encoder
that fuses acquisition metadata, wavelet image content, and the diffusion
timestep into one bundle.
"""

__version__ = "0.1.0"
