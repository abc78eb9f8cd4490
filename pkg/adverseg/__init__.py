"""adverseg - adversarial semantic segmentation on synthetic phantoms."""

__version__ = "0.1.0"
__app_name__ = "adverseg"
