"""Taste-group collaborative filtering for implicit feedback.

Items are organised into a hierarchy of binary latent variables; each latent
at a chosen level defines a soft group of users, groups are characterised by
their members' consumption, and users are scored through their memberships.
"""

from ._kernels import BACKEND
from .data import (FeedbackMatrix, InteractionRecord, SplitSpec, build_matrix,
                   parse_interactions, recency_filter, temporal_split)
from .hlta import LearnConfig, learn_hlta
from .inference import Evidence, batch_posteriors, log_likelihood, posteriors
from .ltm import LatentTreeModel, deserialize, latents_at_level, serialize, validate
from .metrics import EvalProtocol, auc, evaluate, ndcg_at_r
from .recommend import TasteGroupRecommender, group_preferences, score, top_n
from .synthetic import SynthConfig, generate, group_recovery_score

__version__ = "0.1.0"
