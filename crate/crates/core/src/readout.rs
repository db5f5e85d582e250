//! Detector plane: M category areas, each cut into N task bands. Task i
//! reads the mean intensity of its band in every category area and picks
//! the brightest.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Every band sees Σ_λ I_λ.
    Broadband,
    /// Band D_i^j sees only channel i.
    WavelengthSelective,
}

/// Axis-aligned pixel rectangle on the K×K detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.row < o.row + o.height
            && o.row < self.row + self.height
            && self.col < o.col + o.width
            && o.col < self.col + self.width
    }
}

/// Overrides for the default detector geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutParams {
    /// Side of each square category area; default ⌊K/8⌋.
    pub region_side: Option<usize>,
    /// Gap between neighbouring areas; default ⌊K/16⌋.
    pub gap: Option<usize>,
    /// Rows of the area grid; default ⌈M/5⌉.
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorLayout {
    side: usize,
    category_count: usize,
    task_count: usize,
    region_side: usize,
    gap: usize,
    grid_rows: usize,
    grid_cols: usize,
    categories: Vec<Rect>,
    // bands[j * task_count + i] = D_i^j
    bands: Vec<Rect>,
}

/// Lays out M square areas on a grid centered in the window (row-major,
/// each row centered on its own) and splits each area into N equal
/// horizontal bands, band 0 on top.
pub fn build_layout(
    side: usize,
    categories: usize,
    tasks: usize,
    params: LayoutParams,
) -> Result<DetectorLayout> {
    if categories == 0 || tasks == 0 {
        return Err(Error::InvalidArgument("need at least one category and task".into()));
    }
    let region = params.region_side.unwrap_or(side / 8);
    let gap = params.gap.unwrap_or(side / 16);
    let rows = params.rows.unwrap_or(categories.div_ceil(5)).max(1);
    let cols = categories.div_ceil(rows);
    if region == 0 {
        return Err(Error::LayoutOverflow(format!("region side 0 for K={side}")));
    }
    let band = region / tasks;
    if band == 0 {
        return Err(Error::LayoutOverflow(format!(
            "region side {region} cannot hold {tasks} bands"
        )));
    }
    let height = rows * region + (rows - 1) * gap;
    let width = cols * region + (cols - 1) * gap;
    if height > side || width > side {
        return Err(Error::LayoutOverflow(format!(
            "{rows}x{cols} areas of {region}px with {gap}px gaps need {height}x{width}, window is {side}"
        )));
    }
    let top = (side - height) / 2;
    let mut rects = Vec::with_capacity(categories);
    for r in 0..rows {
        let in_row = (categories - r * cols).min(cols);
        if in_row == 0 {
            break;
        }
        let row_width = in_row * region + (in_row - 1) * gap;
        let left = (side - row_width) / 2;
        for c in 0..in_row {
            rects.push(Rect {
                row: top + r * (region + gap),
                col: left + c * (region + gap),
                height: region,
                width: region,
            });
        }
    }
    let mut bands = Vec::with_capacity(categories * tasks);
    for area in &rects {
        for i in 0..tasks {
            bands.push(Rect {
                row: area.row + i * band,
                col: area.col,
                height: band,
                width: region,
            });
        }
    }
    Ok(DetectorLayout {
        side,
        category_count: categories,
        task_count: tasks,
        region_side: region,
        gap,
        grid_rows: rows,
        grid_cols: cols,
        categories: rects,
        bands,
    })
}

impl DetectorLayout {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn category_count(&self) -> usize {
        self.category_count
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn region_side(&self) -> usize {
        self.region_side
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn gap(&self) -> usize {
        self.gap
    }

    pub fn category_area(&self, category: usize) -> Rect {
        self.categories[category]
    }

    /// Sub-region D_task^category.
    pub fn band(&self, category: usize, task: usize) -> Rect {
        self.bands[category * self.task_count + task]
    }

    pub fn band_area(&self) -> usize {
        self.bands[0].area()
    }

    pub fn mask(&self, category: usize, task: usize) -> Array2<bool> {
        let r = self.band(category, task);
        Array2::from_shape_fn((self.side, self.side), |(y, x)| r.contains(y, x))
    }

    /// Union of task `task`'s bands over all categories.
    pub fn task_support(&self, task: usize) -> Array2<bool> {
        let mut m = Array2::from_elem((self.side, self.side), false);
        for j in 0..self.category_count {
            let r = self.band(j, task);
            m.slice_mut(s![r.row..r.row + r.height, r.col..r.col + r.width])
                .fill(true);
        }
        m
    }

    /// Union of every task's bands.
    pub fn full_support(&self) -> Array2<bool> {
        let mut m = Array2::from_elem((self.side, self.side), false);
        for r in &self.bands {
            m.slice_mut(s![r.row..r.row + r.height, r.col..r.col + r.width])
                .fill(true);
        }
        m
    }

    pub fn is_disjoint(&self) -> bool {
        self.bands
            .iter()
            .enumerate()
            .all(|(a, ra)| self.bands[a + 1..].iter().all(|rb| !ra.overlaps(rb)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("layout: {e}")))
    }
}

/// P_i: mean intensity of task i's band in each of the M category areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledScores(pub Vec<f64>);

impl PooledScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn rect_mean(map: &Array2<f64>, r: &Rect) -> f64 {
    map.slice(s![r.row..r.row + r.height, r.col..r.col + r.width])
        .sum()
        / r.area() as f64
}

/// Channel maps each task reads under `mode`.
fn sources(task: usize, channels: usize, mode: FilterMode) -> std::ops::Range<usize> {
    match mode {
        FilterMode::Broadband => 0..channels,
        FilterMode::WavelengthSelective => task..task + 1,
    }
}

fn check_pool_inputs(intensities: &[Array2<f64>], layout: &DetectorLayout, mode: FilterMode) -> Result<()> {
    if intensities.is_empty() {
        return Err(Error::Empty("no intensity maps".into()));
    }
    for m in intensities {
        if m.dim() != (layout.side, layout.side) {
            return Err(Error::shape(
                format!("{0}x{0}", layout.side),
                format!("{:?}", m.dim()),
            ));
        }
    }
    if mode == FilterMode::WavelengthSelective && intensities.len() != layout.task_count {
        return Err(Error::ChannelMismatch {
            expected: layout.task_count,
            actual: intensities.len(),
        });
    }
    Ok(())
}

pub fn pool(
    intensities: &[Array2<f64>],
    layout: &DetectorLayout,
    mode: FilterMode,
) -> Result<Vec<PooledScores>> {
    check_pool_inputs(intensities, layout, mode)?;
    let mut out = Vec::with_capacity(layout.task_count);
    for i in 0..layout.task_count {
        let mut p = vec![0.0; layout.category_count];
        for c in sources(i, intensities.len(), mode) {
            for (j, pj) in p.iter_mut().enumerate() {
                *pj += rect_mean(&intensities[c], &layout.band(j, i));
            }
        }
        out.push(PooledScores(p));
    }
    Ok(out)
}

/// Adjoint of [`pool`]: turns ∂L/∂P_i into ∂L/∂I_c for `channels` maps.
pub fn pool_backward(
    upstream: &[Vec<f64>],
    layout: &DetectorLayout,
    mode: FilterMode,
    channels: usize,
) -> Result<Vec<Array2<f64>>> {
    if upstream.len() != layout.task_count {
        return Err(Error::ChannelMismatch {
            expected: layout.task_count,
            actual: upstream.len(),
        });
    }
    if mode == FilterMode::WavelengthSelective && channels != layout.task_count {
        return Err(Error::ChannelMismatch {
            expected: layout.task_count,
            actual: channels,
        });
    }
    let k = layout.side;
    let mut grads = vec![Array2::zeros((k, k)); channels];
    for (i, dp) in upstream.iter().enumerate() {
        if dp.len() != layout.category_count {
            return Err(Error::shape(layout.category_count, dp.len()));
        }
        for c in sources(i, channels, mode) {
            for (j, &g) in dp.iter().enumerate() {
                let r = layout.band(j, i);
                let v = g / r.area() as f64;
                grads[c]
                    .slice_mut(s![r.row..r.row + r.height, r.col..r.col + r.width])
                    .mapv_inplace(|x| x + v);
            }
        }
    }
    Ok(grads)
}

/// Index of the largest score; ties go to the lowest index.
pub fn classify(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("score vector".into()));
    }
    let mut best = 0;
    for (j, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Scores as percentages of their sum.
pub fn energy_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("scores sum to zero".into()));
    }
    Ok(scores.iter().map(|&p| 100.0 * p / total).collect())
}
