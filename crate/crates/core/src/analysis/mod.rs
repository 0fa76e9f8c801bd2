//! Coincidence histograms, peak metrics, CAR, fringe fits and rates.

pub mod car;
pub mod fit;
pub mod histogram;
pub mod peaks;
pub mod rates;
pub mod visibility;

pub use car::{compute_car, CarResult};
pub use fit::{fit_cosine, FringeFit};
pub use histogram::{build_delay_histogram, DelayHistogram};
pub use peaks::{peak_metrics, profile_fwhm, PeakMetrics};
pub use rates::{rate_report, RateReport};
pub use visibility::{raw_visibility, visibility_corrected};

/// Default offsets for accidental windows, clear of the three physical peaks
/// at a 1 ns bin period.
pub const DEFAULT_ACCIDENTAL_OFFSETS_PS: [f64; 4] = [-3500.0, -2500.0, 2500.0, 3500.0];
