"""Multi-task user-satisfaction prediction for proactive dialogue
clarification: synthetic corpus generation, a three-sub-module transformer
scorer with contrastive and domain-intent auxiliary objectives, AUC/CLA
evaluation, and threshold-gated staged serving."""

__version__ = "0.1.0"
