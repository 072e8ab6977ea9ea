from .cache import StatsCache, cache_key
from .calib_config import CalibConfig
from .collect import (
    DomainStats, MixedStats, SiteMoments,
    collect_domain_stats, collect_stats_from_sequences, mix_stats,
)
from .corpus import (
    CalibrationSet, DomainSpec,
    build_calibration_set, load_corpus, load_manifest, normalize_weights,
)
from .stats import ChannelStats, accumulate, merge
