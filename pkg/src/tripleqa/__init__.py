"""Triple-attention multimodal question answering with audio."""
