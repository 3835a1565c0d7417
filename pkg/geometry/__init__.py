# Geometry module for SE(2) frames, relative descriptors and Fourier features
