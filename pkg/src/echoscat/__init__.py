"""echoscat: ultrasound speckle simulation, paired dataset generation,
and sparse scatterer-map reconstruction with an evaluation suite."""

from .errors import (EchoscatError, FormatError, MetricError, NumericalError,
                     ParameterError)
from .types import (BModeImage, Domain, GridSpec, ImagingConfig, RFFrame,
                    ScatterGrid, ScattererCloud)
from .formats import (grid_from_bmode, load_cloud, load_grid, save_cloud,
                      save_grid, save_pgm)
from .psf import PSFStack, make_psf_stack, make_pulse
from .forward import (envelope, log_compress, simulate_bmode, simulate_rf,
                      simulate_rf_grid)
from .phantoms import (DatasetPair, IntensityImage, child_seed,
                       cloud_from_grid, generate_cloud, generate_dataset,
                       ingest_intensity_images, inclusion_phantom,
                       make_training_pair, procedural_image, rasterize_cloud,
                       sample_amplitudes, sigma_of)
from .inverse import (AdmmParams, ConvergenceReport, ViewSystem,
                      build_view_system, demodulate_to_rf,
                      lambda_max_estimate, reconstruct_from_bmode, scatrec)
from .metrics import (MetricReport, Roi, chi2_hist, cnr, evaluate_views,
                      inclusion_rois, mii, normalized_error, snr)

__version__ = "0.1.0"
