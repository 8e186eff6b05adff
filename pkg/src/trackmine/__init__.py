"""trackmine: tracklet merging, appearance clustering, clustering
evaluation, and detector anchor subselection for mined video tracks."""

__version__ = "0.1.0"

from .density import ClusterAssignment, Hdbscan, HdbscanConfig, hdbscan  # noqa: F401
from .embedding import (  # noqa: F401
    EmbeddingModel,
    EmbeddingRecord,
    TrainConfig,
    TripletBatch,
    TripletEmbedder,
    batch_hard_terms,
    l2_normalize,
    representative_embedding,
    train_embedding,
    triplet_loss,
)
from .geometry import (  # noqa: F401
    Box,
    Frame,
    MaskRLE,
    Track,
    TrackCollection,
    Tracklet,
    box_iou,
    decode_rle,
    encode_rle,
    mask_iou,
)
from .merging import MergeConfig, SelectionLog, merge_collection, overlap_ratio  # noqa: F401
from .metrics import ContingencyTable, ami, contingency, homogeneity_completeness  # noqa: F401
