"""Exception types raised across the pipeline."""


class VCubeError(Exception):
    pass


class BehindCamera(VCubeError):
    pass


class DegenerateFrustum(VCubeError):
    pass


class UnknownCube(VCubeError, KeyError):
    pass


class InvalidLayout(VCubeError):
    pass


class DimensionMismatch(VCubeError, ValueError):
    pass


class EmptyDepth(VCubeError):
    pass


class TooFewViews(VCubeError):
    pass


class EmptyMask(VCubeError):
    pass


class MarkerNotVisible(VCubeError):
    pass


class InsufficientData(VCubeError):
    pass


class MissingPortrait(VCubeError):
    pass


class CodecError(VCubeError):
    pass


class ConfigError(VCubeError):
    pass
