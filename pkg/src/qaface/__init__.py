"""Quality-aware center injection for margin-softmax face recognition,
with a small synthetic lab to exercise it."""

__version__ = "0.1.0"
