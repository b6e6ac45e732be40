"""Single-file page-organized dataset container and high-throughput loader."""

from .codecs import CodecId, ImageBlob, decode_image, encode_image
from .errors import BboxError
from .format import (
    DatasetHeader,
    FieldDescriptor,
    FieldKind,
    array_field,
    bytes_field,
    float_field,
    image_field,
    int_field,
    validate_file,
)
from .loader import Batch, EpochStats, Loader, LoaderConfig
from .pipeline import (
    Normalize,
    Opaque,
    RandomCrop,
    RandomFlip,
    Resize,
    ToFloat,
    parse_pipeline,
)
from .reader import Dataset, Direct, OsCache, ProcessCacheStrategy, open_dataset
from .sources import DirectoryImageSource, InMemorySource, SyntheticImageSource
from .traversal import OrderKind, TraversalOrder, uniformity_probe
from .writer import WriteReport, WriterConfig, report_waste, write_dataset

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BboxError",
    "CodecId",
    "Dataset",
    "DatasetHeader",
    "DirectoryImageSource",
    "Direct",
    "EpochStats",
    "FieldDescriptor",
    "FieldKind",
    "ImageBlob",
    "InMemorySource",
    "Loader",
    "LoaderConfig",
    "Normalize",
    "Opaque",
    "OrderKind",
    "OsCache",
    "ProcessCacheStrategy",
    "RandomCrop",
    "RandomFlip",
    "Resize",
    "SyntheticImageSource",
    "ToFloat",
    "TraversalOrder",
    "WriteReport",
    "WriterConfig",
    "array_field",
    "bytes_field",
    "decode_image",
    "encode_image",
    "float_field",
    "image_field",
    "int_field",
    "open_dataset",
    "parse_pipeline",
    "report_waste",
    "uniformity_probe",
    "validate_file",
    "write_dataset",
]
