"""Loading, generating, encoding, normalising and splitting datasets."""

from poisonbench.data_ingest.cifar import (
    CIFAR10_CLASSES,
    RECORD_BYTES,
    parse_cifar10_batch,
    read_cifar10_batches,
    serialize_cifar10_batch,
    write_cifar10_batch,
)
from poisonbench.data_ingest.images import (
    channel_stats,
    normalize_images,
    select_classes,
    synthetic_cifar_bytes,
    synthetic_cifar_subset,
)
from poisonbench.data_ingest.split import allocate_stratified, stratified_split
from poisonbench.data_ingest.tabular import (
    CLAIMS_SCHEMA,
    LABEL_COLUMN,
    encode_tabular,
    generate_insurance_claims,
    parse_tabular_csv,
    read_tabular_csv,
    tabular_to_csv,
    write_tabular_csv,
)
from poisonbench.data_ingest.types import (
    CATEGORICAL,
    NUMERIC,
    Dataset,
    DatasetSplit,
    EncodedMatrix,
    ImageDataset,
    LabeledExample,
    TabularDataset,
)
