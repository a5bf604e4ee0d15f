"""Live-comment-augmented multimodal affective analysis toolkit."""

__version__ = "0.1.0"
