"""Knowledge-distillation lab: bilateral contrastive distillation on a small autodiff core."""

__version__ = "0.1.0"
