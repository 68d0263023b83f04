from captrfuse.nn.attention import DecoderLayer, EncoderLayer, MultiHeadAttention, sinusoidal_positions
from captrfuse.nn.captioner import CaptionTransformer, decode_caption
from captrfuse.nn.classifier import ClassifierHead, FusionClassifier, FusionMode, LanguageEncoder
from captrfuse.nn.module import Module

__all__ = [
    "DecoderLayer",
    "EncoderLayer",
    "MultiHeadAttention",
    "sinusoidal_positions",
    "CaptionTransformer",
    "decode_caption",
    "ClassifierHead",
    "FusionClassifier",
    "FusionMode",
    "LanguageEncoder",
    "Module",
]
