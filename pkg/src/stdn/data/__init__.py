"""Trip ingestion, volume/flow tensors, patches and windowed samples."""

from .grid import GridSpec, IngestError, TimeSpec, TripRecord, TripTable, ingest_trips, write_trips_csv
from .samples import SampleConfig, SampleSet, TrainingSample, make_samples, split_train_val
from .synth import SynthConfig, SynthConfigError, load_synth_config, parse_synth_config, synthesize_city
from .tensors import (
    ConfigError,
    FlowTensor,
    Normalizer,
    SparseFlow,
    VolumeTensor,
    build_flows,
    build_volume,
    extract_flow_stack,
    extract_patch,
    fit_normalizer,
)
