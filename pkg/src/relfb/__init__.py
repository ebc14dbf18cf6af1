"""Relevance-weighted learnable filterbank front-end for audio classification.

Two trainable stages process raw waveforms: a bank of cosine-modulated
Gaussian band-pass kernels producing a time-frequency representation, and a
bank of 2-D rate-scale kernels filtering that representation. Each stage is
gated by a small relevance sub-network whose softmax output re-weights the
feature maps. Everything trains jointly against cross-entropy with Adam on a
hand-rolled reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
