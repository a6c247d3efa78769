"""Full-reference image quality via adaptive quality factors in a learned visual-word dictionary."""

__version__ = "0.1.0"
