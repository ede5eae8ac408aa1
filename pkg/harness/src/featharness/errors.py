class HarnessError(Exception):
    """Base class for harness failures."""


class ModelLoadFailure(HarnessError):
    """Pretrained weights could not be loaded or downloaded."""


class ImageDecodeFailure(HarnessError):
    """An input image could not be decoded."""

    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path}: {reason}")
        self.path = str(path)
