//! Run configuration: sectioned TOML, unknown keys rejected, every field
//! defaulted so a resolved copy written next to the outputs reproduces the
//! run on its own.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, subset_classes, Interpolation, LabeledImageSet};
use crate::error::{Error, Result};
use crate::optics::{layer_spacing, GridSpec, SystemGeometry};
use crate::readout::{build_layout, DetectorLayout, FilterMode, LayoutParams};
use crate::training::{
    default_logit_scale, AdamParams, LossConfig, MultiTaskModel, PhaseInit, TaskEncoding,
    TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub wavelengths_nm: Vec<f64>,
    pub side: usize,
    pub pitch_um: f64,
    pub layers: usize,
    pub pad_factor: usize,
    /// Uniform plane spacing; derived from the diffraction cone when unset.
    pub spacing_mm: Option<f64>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            wavelengths_nm: vec![700.0, 400.0],
            side: 100,
            pitch_um: 4.0,
            layers: 3,
            pad_factor: 2,
            spacing_mm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub categories: usize,
    /// Defaults to the number of data tasks, else the wavelength count.
    pub tasks: Option<usize>,
    pub region_side: Option<usize>,
    pub gap: Option<usize>,
    pub rows: Option<usize>,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            categories: 10,
            tasks: None,
            region_side: None,
            gap: None,
            rows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub gamma: f64,
    /// Multiplier on pooled scores before the softmax; defaults to
    /// [`default_logit_scale`] of the layout.
    pub logit_scale: Option<f64>,
    pub filter: FilterMode,
    pub encoding: TaskEncoding,
    pub init: PhaseInit,
    pub interpolation: Interpolation,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            gamma: 1.0,
            logit_scale: None,
            filter: FilterMode::Broadband,
            encoding: TaskEncoding::MultiWavelength,
            init: t.init,
            interpolation: t.interpolation,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskData {
    #[serde(default)]
    pub name: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Classes to keep, relabelled 0.. in list order.
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Keep only the first n training samples of each task.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub tasks: Vec<TaskData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoeSection {
    /// One index per wavelength; a single value is reused for all.
    pub refractive_index: Vec<f64>,
    pub max_order: usize,
}

impl Default for DoeSection {
    fn default() -> Self {
        Self {
            refractive_index: vec![1.5],
            max_order: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub detector_rate_ghz: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            detector_rate_ghz: 30.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub geometry: GeometrySection,
    pub layout: LayoutSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub doe: DoeSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Sets `section.key` in a parsed document. The value is read as a TOML
/// literal when possible (`3`, `0.5`, `[700, 400]`, `true`), else as a bare
/// string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| config_err(format!("override key `{key}` is not section.key")))?;
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let entry = doc
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), value);
            Ok(())
        }
        _ => Err(config_err(format!("`{section}` is not a section"))),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(config_err)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.rebase_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative dataset paths are taken relative to the config file.
    fn rebase_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.data.tasks {
            fix(&mut t.train_images);
            fix(&mut t.train_labels);
            fix(&mut t.test_images);
            fix(&mut t.test_labels);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn task_count(&self) -> usize {
        self.layout.tasks.unwrap_or(if self.data.tasks.is_empty() {
            self.geometry.wavelengths_nm.len()
        } else {
            self.data.tasks.len()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wl = self.geometry.wavelengths_nm.len();
        let tasks = self.task_count();
        if wl == 0 {
            return Err(config_err("geometry.wavelengths_nm is empty"));
        }
        if !self.data.tasks.is_empty() && self.data.tasks.len() != tasks {
            return Err(config_err(format!(
                "{} data tasks but layout.tasks = {tasks}",
                self.data.tasks.len()
            )));
        }
        match self.train.encoding {
            TaskEncoding::MultiWavelength if wl != tasks => {
                return Err(config_err(format!(
                    "{wl} wavelengths for {tasks} tasks; multi-wavelength needs one per task"
                )))
            }
            TaskEncoding::Overlapped if wl != 1 => {
                return Err(config_err("overlapped encoding uses exactly one wavelength"))
            }
            _ => {}
        }
        if self.train.filter == FilterMode::WavelengthSelective && wl != tasks {
            return Err(config_err("wavelength-selective filter needs one wavelength per task"));
        }
        if !(self.metrics.detector_rate_ghz > 0.0) {
            return Err(config_err("metrics.detector_rate_ghz must be positive"));
        }
        let n = &self.doe.refractive_index;
        if !(n.len() == 1 || n.len() == wl) {
            return Err(config_err(format!(
                "doe.refractive_index needs 1 or {wl} entries, got {}",
                n.len()
            )));
        }
        self.train_config().validate()?;
        self.geometry()?;
        self.detector_layout()?;
        Ok(())
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.geometry.wavelengths_nm.iter().map(|w| w * 1e-9).collect()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.geometry;
        GridSpec::new(g.side, g.pitch_um * 1e-6, g.pad_factor).map_err(config_err)
    }

    pub fn geometry(&self) -> Result<SystemGeometry> {
        let g = &self.geometry;
        SystemGeometry::uniform(
            self.wavelengths(),
            self.grid()?,
            g.layers,
            g.spacing_mm.map(|d| d * 1e-3),
        )
        .map_err(config_err)
    }

    pub fn detector_layout(&self) -> Result<DetectorLayout> {
        let l = &self.layout;
        build_layout(
            self.geometry.side,
            l.categories,
            self.task_count(),
            LayoutParams {
                region_side: l.region_side,
                gap: l.gap,
                rows: l.rows,
            },
        )
        .map_err(config_err)
    }

    pub fn logit_scale(&self) -> Result<f64> {
        Ok(match self.train.logit_scale {
            Some(s) => s,
            None => default_logit_scale(&self.detector_layout()?),
        })
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            gamma: self.train.gamma,
            logit_scale: self.logit_scale()?,
        })
    }

    pub fn model(&self) -> Result<MultiTaskModel> {
        MultiTaskModel::new(
            self.geometry()?,
            self.detector_layout()?,
            self.train.filter,
            self.train.encoding,
            self.loss_config()?,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            seed: self.run.seed,
            init: t.init,
            interpolation: t.interpolation,
            adam: AdamParams {
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
        }
    }

    pub fn refractive_indices(&self) -> Vec<f64> {
        let n = &self.doe.refractive_index;
        if n.len() == 1 {
            vec![n[0]; self.geometry.wavelengths_nm.len()]
        } else {
            n.clone()
        }
    }

    /// Copy with every derived default written out explicitly.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        if out.geometry.spacing_mm.is_none() {
            out.geometry.spacing_mm = Some(layer_spacing(&self.wavelengths(), &self.grid()?)? * 1e3);
        }
        let layout = self.detector_layout()?;
        out.layout.tasks = Some(self.task_count());
        out.layout.region_side = Some(layout.region_side());
        out.layout.gap = Some(layout.gap());
        out.layout.rows = Some(layout.grid_rows());
        out.train.logit_scale = Some(self.logit_scale()?);
        out.doe.refractive_index = self.refractive_indices();
        Ok(out)
    }

    /// Loads, class-filters and truncates each task's split.
    pub fn load_sets(&self, split: Split) -> Result<Vec<LabeledImageSet>> {
        if self.data.tasks.is_empty() {
            return Err(config_err("no [[data.tasks]] configured"));
        }
        let limit = match split {
            Split::Train => self.data.train_limit,
            Split::Test => self.data.test_limit,
        };
        self.data
            .tasks
            .iter()
            .map(|t| {
                let (img, lbl) = match split {
                    Split::Train => (&t.train_images, &t.train_labels),
                    Split::Test => (&t.test_images, &t.test_labels),
                };
                let mut set = load_idx(img, lbl)?;
                if let Some(classes) = &t.classes {
                    if classes.len() != self.layout.categories {
                        return Err(config_err(format!(
                            "task `{}` keeps {} classes, layout has {}",
                            t.name,
                            classes.len(),
                            self.layout.categories
                        )));
                    }
                    set = subset_classes(&set, classes, None, 0)?;
                }
                if let Some(n) = limit {
                    set = set.truncated(n);
                }
                Ok(set)
            })
            .collect()
    }
}
