"""Ambient-Pix2PixGAN training and image-quality assessment."""
