use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::SystemGeometry;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Time-of-flight and size figures of one inference pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalMetrics {
    /// Input plane to detector, meters.
    pub path_length: f64,
    pub propagation_time: f64,
    pub readout_time: f64,
    /// Propagation plus readout, seconds.
    pub latency: f64,
    /// Trainable phase elements L·K².
    pub element_count: usize,
    pub channel_count: usize,
    /// Free-space propagations a simulator performs per inference, (L+1)·N.
    pub propagations: usize,
    /// Nominal 5·G²·log2(G²) flops for one forward plus one inverse 2-D FFT
    /// on the padded grid.
    pub fft_flops_per_propagation: f64,
}

/// path/c + 1/rate.
pub fn latency(path_length: f64, detector_rate: f64) -> Result<f64> {
    if !(detector_rate > 0.0) || !detector_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "detector rate must be positive, got {detector_rate}"
        )));
    }
    if !(path_length >= 0.0) || !path_length.is_finite() {
        return Err(Error::InvalidArgument(format!("bad path length {path_length}")));
    }
    Ok(path_length / SPEED_OF_LIGHT + 1.0 / detector_rate)
}

pub fn optical_metrics(geometry: &SystemGeometry, detector_rate: f64) -> Result<OpticalMetrics> {
    let path_length = geometry.total_path();
    let total = latency(path_length, detector_rate)?;
    let propagation_time = path_length / SPEED_OF_LIGHT;
    let readout_time = 1.0 / detector_rate;
    let k = geometry.grid().side();
    let g = geometry.grid().padded_side() as f64;
    let n2 = g * g;
    Ok(OpticalMetrics {
        path_length,
        propagation_time,
        readout_time,
        latency: total,
        element_count: geometry.layer_count() * k * k,
        channel_count: geometry.channel_count(),
        propagations: (geometry.layer_count() + 1) * geometry.channel_count(),
        fft_flops_per_propagation: 2.0 * 5.0 * n2 * n2.log2(),
    })
}
