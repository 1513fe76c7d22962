"""Diversity of categorical consumption measured with co-consumption distances."""

from .divcore import (
    DistanceMatrix,
    DiversityReport,
    MdsEmbedding,
    classical_mds,
    cosine_distance_matrix,
    diversity_batch,
    rao_stirling,
    shannon_entropy,
    volume,
)
from .ingest import (
    ArtistEntry,
    ConsumptionMatrix,
    FilterPolicy,
    PlayRecord,
    build_consumption_matrix,
    music_interest_share,
    parse_catalog,
    parse_plays,
    select_top_artists,
)

__version__ = "0.1.0"
