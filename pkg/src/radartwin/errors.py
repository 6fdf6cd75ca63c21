"""Exception types raised across the package."""


class RadarTwinError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateNeighborhood(RadarTwinError):
    """A point's k-NN covariance is rank deficient (collinear or coincident samples)."""


class MismatchedFrameShape(RadarTwinError):
    """Frames passed to a per-index operation do not share a point count."""


class ParseError(RadarTwinError):
    """Malformed PLY input. Carries the 1-based line number of the offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegenerateInit(RadarTwinError):
    """Registration variance initialised to zero (identical single-point clouds)."""


class SingularSystem(RadarTwinError):
    """The M-step linear system could not be solved."""


class UnsupportedRows(RadarTwinError):
    """Template rows with no correspondence mass in an unregularised M-step.

    Carries ``indices``, the offending template row indices.
    """

    def __init__(self, indices):
        super().__init__(f"{len(indices)} template rows carry no correspondence mass: "
                         f"{list(indices)[:8]}{'...' if len(indices) > 8 else ''}")
        self.indices = list(indices)


class SourceCoincident(RadarTwinError):
    """Field requested at the dipole position itself."""


class NearFieldSingular(RadarTwinError):
    """Observation point closer than one radian-distance (wavelength/2pi) to a sample."""


class EmptySelection(RadarTwinError):
    """No scattering centers qualify at the requested threshold."""


class NonuniformArray(RadarTwinError):
    """Virtual array pitch is not uniform enough for FFT beamforming."""


class ZeroSample(RadarTwinError):
    """Phase requested for a zero-magnitude complex sample."""


class LengthMismatch(RadarTwinError):
    """Waveforms of different lengths passed to a sample-wise metric."""


class ZeroVariance(RadarTwinError):
    """Correlation requested against a constant waveform."""


class PipelineError(RadarTwinError):
    """A pipeline stage failed. Carries ``stage``; earlier artifacts stay on disk."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
