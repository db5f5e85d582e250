use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossConfig, LossReport, OneHotLabel};
use crate::error::{Error, Result};
use crate::grad::{backward, forward_with_tape, PhaseGradient};
use crate::optics::{ComplexField, Diffractive, PhaseStack, SystemGeometry};
use crate::readout::{classify, pool, pool_backward, DetectorLayout, FilterMode, PooledScores};

/// How task inputs map onto wavelength channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskEncoding {
    /// Task i rides on wavelength i.
    #[default]
    MultiWavelength,
    /// All task images are summed coherently onto one wavelength.
    Overlapped,
}

/// K² / (M·N·a), where a = band area / K² is the fraction of the window
/// one band covers. A unit-power field spread evenly over every band then
/// scores 1/(M·N·a)², a few tens for the default layout.
pub fn default_logit_scale(layout: &DetectorLayout) -> f64 {
    let k2 = (layout.side() * layout.side()) as f64;
    let fraction = layout.band_area() as f64 / k2;
    k2 / ((layout.category_count() * layout.task_count()) as f64 * fraction)
}

/// Result of running one N-tuple of inputs through the detector.
#[derive(Debug, Clone)]
pub struct Inference {
    pub intensities: Vec<Array2<f64>>,
    pub scores: Vec<PooledScores>,
    pub predictions: Vec<usize>,
}

/// Optics, detector and objective bundled for training and evaluation.
#[derive(Debug, Clone)]
pub struct MultiTaskModel {
    network: Diffractive,
    layout: DetectorLayout,
    filter: FilterMode,
    encoding: TaskEncoding,
    loss: LossConfig,
    supports: Vec<Array2<bool>>,
}

impl MultiTaskModel {
    pub fn new(
        geometry: SystemGeometry,
        layout: DetectorLayout,
        filter: FilterMode,
        encoding: TaskEncoding,
        loss: LossConfig,
    ) -> Result<Self> {
        let channels = geometry.channel_count();
        let tasks = layout.task_count();
        if layout.side() != geometry.grid().side() {
            return Err(Error::shape(geometry.grid().side(), layout.side()));
        }
        let supports = match encoding {
            TaskEncoding::MultiWavelength => {
                if channels != tasks {
                    return Err(Error::ChannelMismatch {
                        expected: tasks,
                        actual: channels,
                    });
                }
                (0..tasks).map(|t| layout.task_support(t)).collect()
            }
            TaskEncoding::Overlapped => {
                if channels != 1 {
                    return Err(Error::ChannelMismatch {
                        expected: 1,
                        actual: channels,
                    });
                }
                vec![layout.full_support()]
            }
        };
        if filter == FilterMode::WavelengthSelective && channels != tasks {
            return Err(Error::InvalidArgument(
                "wavelength-selective readout needs one channel per task".into(),
            ));
        }
        if !(loss.logit_scale > 0.0) || !(loss.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss config {loss:?}")));
        }
        Ok(Self {
            network: Diffractive::new(geometry)?,
            layout,
            filter,
            encoding,
            loss,
            supports,
        })
    }

    pub fn network(&self) -> &Diffractive {
        &self.network
    }

    pub fn geometry(&self) -> &SystemGeometry {
        self.network.geometry()
    }

    pub fn layout(&self) -> &DetectorLayout {
        &self.layout
    }

    pub fn filter(&self) -> FilterMode {
        self.filter
    }

    pub fn encoding(&self) -> TaskEncoding {
        self.encoding
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn task_count(&self) -> usize {
        self.layout.task_count()
    }

    pub fn category_count(&self) -> usize {
        self.layout.category_count()
    }

    /// Per-task real amplitudes → per-channel input fields.
    pub fn encode(&self, amplitudes: &[Array2<f64>]) -> Result<Vec<ComplexField>> {
        if amplitudes.len() != self.task_count() {
            return Err(Error::ChannelMismatch {
                expected: self.task_count(),
                actual: amplitudes.len(),
            });
        }
        let geo = self.network.geometry();
        match self.encoding {
            TaskEncoding::MultiWavelength => amplitudes
                .iter()
                .zip(geo.wavelengths())
                .map(|(a, &w)| ComplexField::from_real(a, w, *geo.grid()))
                .collect(),
            TaskEncoding::Overlapped => {
                let mut sum = amplitudes[0].clone();
                for a in &amplitudes[1..] {
                    if a.dim() != sum.dim() {
                        return Err(Error::shape(format!("{:?}", sum.dim()), format!("{:?}", a.dim())));
                    }
                    sum += a;
                }
                Ok(vec![ComplexField::from_real(&sum, geo.wavelengths()[0], *geo.grid())?])
            }
        }
    }

    fn labels(&self, labels: &[usize]) -> Result<Vec<OneHotLabel>> {
        labels
            .iter()
            .map(|&l| OneHotLabel::new(l, self.category_count()))
            .collect()
    }

    pub fn infer(&self, phases: &PhaseStack, amplitudes: &[Array2<f64>]) -> Result<Inference> {
        let inputs = self.encode(amplitudes)?;
        let out = self.network.forward(&inputs, phases)?;
        let scores = pool(&out.intensities, &self.layout, self.filter)?;
        let predictions = scores
            .iter()
            .map(|p| classify(p.as_slice()))
            .collect::<Result<_>>()?;
        Ok(Inference {
            intensities: out.intensities,
            scores,
            predictions,
        })
    }

    /// Joint objective of one sample, forward only.
    pub fn loss(
        &self,
        phases: &PhaseStack,
        amplitudes: &[Array2<f64>],
        labels: &[usize],
    ) -> Result<LossReport> {
        let inf = self.infer(phases, amplitudes)?;
        let pooled: Vec<Vec<f64>> = inf.scores.into_iter().map(|p| p.0).collect();
        let (report, _) = total_loss(
            &pooled,
            &self.labels(labels)?,
            &inf.intensities,
            &self.supports,
            &self.loss,
        )?;
        Ok(report)
    }

    /// Objective, ∂L/∂Φ and per-task predictions of one sample.
    pub fn loss_and_gradient(
        &self,
        phases: &PhaseStack,
        amplitudes: &[Array2<f64>],
        labels: &[usize],
    ) -> Result<(LossReport, PhaseGradient, Vec<usize>)> {
        let onehot = self.labels(labels)?;
        let inputs = self.encode(amplitudes)?;
        let (out, tape) = forward_with_tape(&self.network, &inputs, phases)?;
        let scores = pool(&out.intensities, &self.layout, self.filter)?;
        let predictions = scores
            .iter()
            .map(|p| classify(p.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let pooled: Vec<Vec<f64>> = scores.into_iter().map(|p| p.0).collect();
        let (report, lg) = total_loss(
            &pooled,
            &onehot,
            &out.intensities,
            &self.supports,
            &self.loss,
        )?;
        let mut upstream = pool_backward(&lg.scores, &self.layout, self.filter, inputs.len())?;
        for (u, p) in upstream.iter_mut().zip(&lg.intensity) {
            *u += p;
        }
        let grad = backward(&self.network, &tape, phases, &upstream)?;
        Ok((report, grad, predictions))
    }
}
