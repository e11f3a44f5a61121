"""Continual place-recognition engine: autodiff core, descriptor model, mining,
rehearsal memory, importance and distillation regularisers, synthetic worlds,
training loop and retrieval evaluation."""

__version__ = "0.1.0"
