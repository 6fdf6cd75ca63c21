"""radartwin: deformation-aware mmWave radar observation simulator.

Fuses a dense static surface template with sparse noisy frame sequences
(coherent point drift), computes physical-optics scattering per frame,
synthesises FMCW IF signals, and recovers the surface displacement through a
standard array-radar DSP chain, closed against known ground-truth motion.
"""

from .config import (CpdConfig, DspConfig, EmConfig, PipelineConfig, RadarConfig,
                     load_config, save_config)
from .cpd import (CpdParams, Correspondence, DeformationField, apply_deformation,
                  build_kernel, e_step, init_sigma2, m_step, register)
from .em_scatter import (DipoleSource, EmConstants, ScatteringMap, SurfaceCurrents,
                         eye_weight, incident_h_field, induced_currents, radiate,
                         scattered_field_magnitude, scattering_map, surface_current)
from .errors import (DegenerateInit, DegenerateNeighborhood, EmptySelection,
                     LengthMismatch, MismatchedFrameShape, NearFieldSingular,
                     NonuniformArray, ParseError, PipelineError, RadarTwinError,
                     SingularSystem, SourceCoincident, UnsupportedRows, ZeroSample,
                     ZeroVariance)
from .geometry import (PointCloudFrame, SurfaceSampling, estimate_normals, load_ply,
                       save_ply, subsample, surface_sampling, time_average_frames)
from .metrics import MetricReport, max_crosscorr, pearson, rms_error
from .pipeline import iq_magnitude_compare, run_pipeline
from .radar_dsp import (DisplacementWaveform, RangeAngleMap, RangeProfileSet,
                        beamform, crop_range, displacement, range_profile,
                        select_peak_pixel, smooth_detrend, unwrap_phase)
from .radar_model import (ChirpParams, IFCube, ScatterCenter, VirtualArray,
                          VirtualElement, build_virtual_array, load_cube, save_cube,
                          select_centers_conventional, select_index_set,
                          synth_if_conventional, synth_if_proposed,
                          track_centers_conventional)
from .scene_synth import (BumpSpec, GroundTruth, SceneConfig, TorsoSpec, gen_frames,
                          gen_template, gen_two_site_scene)

__version__ = "0.1.0"
