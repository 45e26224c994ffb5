"""File formats: images, checkpoints, configs and datasets."""

from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save, load_checkpoint, save_checkpoint
from .config_file import ConfigError, load_config, parse_config, save_config, serialize_config
from .dataset import load_dataset, make_dataset, read_manifest
from .images import ImageFormatError, load_image, save_image
