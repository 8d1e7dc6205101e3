from .external import ExternalVocab, encode_external, read_external_csv
from .grid import GridSpec, locate_cell, locate_cells
from .ingest import IngestSummary, TripRecord, build_flow_series, ingest_trips, read_trips_csv
from .samples import PreparedSeries, Sample, SampleList, enumerate_samples, prepare, split_samples
from .series import ExternalRecord, FlowSeries
from .synth import SynthConfig, synth_generate

__all__ = [
    "ExternalRecord", "ExternalVocab", "FlowSeries", "GridSpec", "IngestSummary", "PreparedSeries",
    "Sample", "SampleList", "SynthConfig", "TripRecord", "build_flow_series", "encode_external",
    "enumerate_samples", "ingest_trips", "locate_cell", "locate_cells", "prepare", "read_external_csv",
    "read_trips_csv", "split_samples", "synth_generate",
]
