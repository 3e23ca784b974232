"""Exception types raised across the toolkit."""


class StyloforgeError(Exception):
    """Base class for all toolkit errors."""


# corpus
class MalformedLine(StyloforgeError):
    def __init__(self, line_no: int, reason: str = "not a JSON object"):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class MissingField(StyloforgeError):
    def __init__(self, key: str, line_no: int):
        self.key = key
        self.line_no = line_no
        super().__init__(f"line {line_no}: missing field {key!r}")


class EmptyDocument(StyloforgeError):
    def __init__(self, author_id: str):
        self.author_id = author_id
        super().__init__(f"author {author_id!r} has an empty document")


class DuplicateAuthor(StyloforgeError):
    def __init__(self, author_id: str):
        self.author_id = author_id
        super().__init__(f"duplicate author_id {author_id!r}")


class BadRatios(StyloforgeError):
    pass


class EmptyCorpus(StyloforgeError):
    pass


# tokenizer / pcm
class EmptyText(StyloforgeError):
    pass


class UnknownLanguage(StyloforgeError):
    def __init__(self, lang: str):
        self.lang = lang
        super().__init__(f"no function-token table for language {lang!r}")


class UnannotatedSequence(StyloforgeError):
    pass


# lab
class BatchTooSmall(StyloforgeError):
    pass


# model / objective / optim
class BadDims(StyloforgeError):
    pass


class DegenerateEmbedding(StyloforgeError):
    pass


class TokenOutOfRange(StyloforgeError):
    pass


class DegenerateBatch(StyloforgeError):
    pass


class StepOutOfRange(StyloforgeError):
    pass


class ShapeMismatch(StyloforgeError):
    pass


class NonFiniteGradient(StyloforgeError):
    pass


# trainer
class EmptyValidation(StyloforgeError):
    pass


class NonFiniteLoss(StyloforgeError):
    pass


# eval
class TooFewPairs(StyloforgeError):
    pass


class SingleClass(StyloforgeError):
    pass


class DimMismatch(StyloforgeError):
    pass


# cli
class UnknownVerb(StyloforgeError):
    pass


class ConfigError(StyloforgeError):
    def __init__(self, key: str, reason: str):
        self.key = key
        super().__init__(f"config key {key!r}: {reason}")
