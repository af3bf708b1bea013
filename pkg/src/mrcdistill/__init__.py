"""Two-stage teacher-student distillation for multiple-choice reading comprehension."""

__version__ = "0.1.0"
