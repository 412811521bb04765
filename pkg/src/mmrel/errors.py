"""Exception types shared across the package.

Each carries an ``exit_code`` so the command line can map failures to
process status without inspecting messages.
"""


class MmrelError(Exception):
    exit_code = 1


class MissingInputError(MmrelError):
    exit_code = 2


class DataValidationError(MmrelError):
    exit_code = 3

    def __init__(self, message, doc_id=None):
        if doc_id is not None:
            message = f"[doc {doc_id}] {message}"
        super().__init__(message)
        self.doc_id = doc_id


class CorpusParseError(DataValidationError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)
        self.line = line


class PipelineError(DataValidationError):
    """A pluggable stage (predictor, encoder) failed on a document."""


class ConfigError(MmrelError):
    exit_code = 4
