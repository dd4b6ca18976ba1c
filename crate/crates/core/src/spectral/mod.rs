//! Spectrum-analyzer side of the chain: PSD estimation at a target RBW,
//! reference subtraction, Lorentzian pedestal fits, frame-line detection and
//! pedestal power.

mod fit;
mod spikes;
mod spectrum;

pub use fit::{
    fit_lorentzian, fwhm_vs_distance, lorentzian, DistanceRow, DistanceTable, FitOptions, FitRecord, FitStatus,
    LorentzianFit, MIN_FIT_BINS,
};
pub use spectrum::{
    acf, normalize_peak, pedestal_power, periodogram, subtract_reference, AcfEstimate, CarrierMask, RfSpectrum,
    Welch, DEFAULT_CLAMP_FRACTION, HANN_ENBW_BINS,
};
pub use spikes::{detect_spikes, Spike, DEFAULT_SPIKE_THRESHOLD_DB};
