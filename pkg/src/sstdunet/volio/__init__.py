"""Volume I/O (NIfTI-1), resampling, normalisation, augmentation and noise."""

from sstdunet.volio.manifest import ManifestEntry, read_manifest, write_manifest
from sstdunet.volio.nifti import HEADER_SIZE, Volume, parse_header, read_nifti, write_nifti
from sstdunet.volio.transforms import AugmentConfig, augment, normalize, resize, rician_noise, temporal_mean

__all__ = [
    "ManifestEntry", "read_manifest", "write_manifest", "HEADER_SIZE", "Volume", "parse_header",
    "read_nifti", "write_nifti", "AugmentConfig", "augment", "normalize", "resize", "rician_noise",
    "temporal_mean",
]
