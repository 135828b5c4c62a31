"""Video summarization: U-Net frame scoring, RL training, shot selection, evaluation."""

__version__ = "0.1.0"
