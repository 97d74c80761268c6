"""SST-DUNet: smart shifted-window transformer + dense 3D UNet for rodent fMRI skull stripping."""

__version__ = "0.1.0"
