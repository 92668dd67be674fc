"""Offline feature extractor for decoder-layered vision-language models.

Feeds the `dffrec` trainer without depending on it: the DFFS binary file is
the only contract between the two. Everything here runs on a frozen model;
there is no training and no fine-tuning.
"""


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class ManifestError(ExtractorError):
    pass


class PromptError(ExtractorError):
    pass


class MediaError(ExtractorError):
    """Unreadable media for one item; pipelines skip and continue."""


class ModelError(ExtractorError):
    pass


class StoreWriteError(ExtractorError):
    pass
