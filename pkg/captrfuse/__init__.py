"""
captrfuse: image-to-text translation for target sentiment classification.

Images are captioned by a non-autoregressive transformer, the caption is fused
with the target into an auxiliary sentence, and a sentence-pair encoder
classifies the sentiment toward the target.
"""

__version__ = "0.1.0"
