"""Exception hierarchy. Every error raised on purpose derives from NbarError."""


class NbarError(Exception):
    pass


# metadata parsing
class MalformedXml(NbarError):
    pass


class MissingField(NbarError):
    def __init__(self, field):
        super().__init__(f"missing field: {field}")
        self.field = field


class UnparsableBaseline(NbarError):
    pass


class GridShapeMismatch(NbarError):
    pass


class UnknownBandId(NbarError):
    pass


class EmptyInput(NbarError):
    pass


# kernels / c-factor
class DomainError(NbarError, ValueError):
    pass


class DegenerateBrdf(NbarError):
    pass


# raster plumbing
class EmptyTarget(NbarError):
    pass


class CrsMismatch(NbarError):
    pass


class UnsupportedCrs(NbarError):
    pass


class UnsupportedRasterLayout(NbarError):
    pass


class IoError(NbarError, OSError):
    pass


# pipeline
class MissingMetadata(NbarError):
    pass


class MissingBandRaster(NbarError):
    pass


class DimensionMismatch(NbarError):
    pass


class NoMetadataAsset(NbarError):
    pass


class HttpError(NbarError):
    pass


class MalformedItem(NbarError):
    pass


# indices
class MissingBand(NbarError):
    pass


class AllNodata(NbarError):
    pass
