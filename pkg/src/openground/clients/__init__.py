from .embedding import EmbeddingProvider, ExactMatchEmbedder, HashEmbedder, WireEmbedder, make_embedder
from .http import JsonHttpClient
from .prompts import instantiate
from .replies import ChainReply, ParsedObjects, parse_reply, serialize_reply
from .seg import RecordingSeg, ScriptedSeg, SegBackend, WireSeg, rle_decode, rle_encode
from .vlm import Annotation, RecordingVlm, ScriptedVlm, ViewImage, VlmBackend, VlmRequest, WireVlm
from .wire import WireSettings, wire_backend

__all__ = [
    "Annotation", "ChainReply", "EmbeddingProvider", "ExactMatchEmbedder", "HashEmbedder",
    "JsonHttpClient", "ParsedObjects", "RecordingSeg", "RecordingVlm", "ScriptedSeg", "ScriptedVlm", "SegBackend",
    "ViewImage", "VlmBackend", "VlmRequest", "WireEmbedder", "WireSeg", "WireSettings", "WireVlm",
    "instantiate", "make_embedder", "parse_reply", "rle_decode", "rle_encode", "serialize_reply",
    "wire_backend",
]
