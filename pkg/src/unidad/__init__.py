"""Joint few-step distillation and few-shot adaptation of diffusion models on 2-D toy data."""

__version__ = "0.1.0"
