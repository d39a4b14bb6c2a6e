"""Shared exception hierarchy. Every subsystem raises a subclass so the CLI
can report which part of the pipeline failed."""


class CtgformerError(Exception):
    """Base class for all errors raised by this package."""

    module = "ctgformer"


class NumcoreError(CtgformerError):
    module = "numcore"


class ShapeError(NumcoreError):
    pass


class GraphError(NumcoreError):
    pass


class GradCheckError(NumcoreError):
    pass


class SignalError(CtgformerError):
    module = "signal"


class ModelError(CtgformerError):
    module = "model"


class CheckpointError(ModelError):
    pass


class TrainError(CtgformerError):
    module = "train"


class EvalError(CtgformerError):
    module = "eval"


class DataError(CtgformerError):
    module = "data"


class HpoError(CtgformerError):
    module = "hpo"


class CliError(CtgformerError):
    module = "cli"
