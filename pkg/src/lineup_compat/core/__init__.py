"""Record schemas, configuration, file ingestion and synthetic data."""

from .io import (
    read_lineups,
    read_playtypes,
    read_segments,
    write_lineups,
    write_playtypes,
    write_segments,
)
from .schema import (
    MERGED_PLAYTYPES,
    PLAYTYPES,
    ConfigError,
    LineupRecord,
    McmcConfig,
    ModelConfig,
    ParseError,
    PipelineConfig,
    PlaytypeProfile,
    ShotSegment,
    SynthSpec,
    ValidationReport,
    Violation,
    config_from_dict,
    lineup_sort_key,
    load_config,
    validate_dataset,
)
from .synth import SyntheticDataset, pair_index, synthesize_dataset
