"""Boundary-aware vectorized motion forecasting.

Scenes are polyline maps plus agent histories; the model encodes actors,
lane nodes and boundary nodes, fuses them with distance attention, and
decodes multimodal trajectories with confidences. Training, metrics and
multi-model ensembling live in their own modules.
"""

__version__ = "0.1.0"
