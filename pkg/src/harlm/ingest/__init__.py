from harlm.ingest.datasets import (
    DatasetLayoutError,
    MalformedDataError,
    descriptor_from_frame,
    parse_dataset,
)
from harlm.ingest.labels import (
    CANONICAL_LABELS,
    DEFAULT_LABEL_MAPS,
    UnmappedLabelError,
    harmonize_labels,
    load_label_map,
)

__all__ = [
    "CANONICAL_LABELS",
    "DEFAULT_LABEL_MAPS",
    "DatasetLayoutError",
    "MalformedDataError",
    "UnmappedLabelError",
    "descriptor_from_frame",
    "harmonize_labels",
    "load_label_map",
    "parse_dataset",
]
