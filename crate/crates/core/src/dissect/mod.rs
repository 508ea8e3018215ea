//! Mechanistic probes of a denoiser: state rasters and transition counts,
//! per-σ loss spectra on train / held-out / cube splits, 2D field slices
//! through a cube face, and 1D basin profiles with bootstrap bands.

mod basin;
mod plane;
mod spectrum;
mod transitions;

pub use basin::{
    basin_profile, bootstrap_band, direction_endpoint, write_basin_csv, Band, BasinConfig, BasinProfile, Direction,
    BASIN_ANCHORS, BASIN_POINTS, BASIN_RANGE, BASIN_SIGMA, BOOTSTRAP_RESAMPLES, CI_PERCENTILES,
};
pub use plane::{build_plane, build_plane_with_grid, field_slice, FieldSlice, PlaneSpec, PLANE_GRID, PLANE_RANGE};
pub use spectrum::{
    dsm_spectrum, log_grid, spectrum_grid, uniform_cube_split, Split, Splits, SpectrumConfig, SpectrumMatrix,
    SpectrumPoint, BAND, DEFAULT_REPEATS, SPECTRUM_LEVELS, SPECTRUM_SIGMA_MAX, SPECTRUM_SIGMA_MIN,
};
pub use transitions::{
    transition_counts, AggregatedTransitions, Counts, StateRaster, TransitionTensor, Window,
};
