//! Segmentation pseudo-labels with an explicit "uncertain" class, fused from
//! three mechanisms: a per-pixel Welch test over Monte-Carlo dropout logits,
//! occlusion-based plane visibility, and agreement with the rendered planar
//! map.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{KeypointSet2D, KeypointSet3D};
use crate::hull::Registry;
use crate::raster::{rasterize, MaskGrid, PlanarMap, Viewport, UNCERTAIN};
use crate::stats::student_t_two_tailed;
use crate::visibility::resolve_depth_flip;

/// Paper-default knobs for the labelling step.
pub mod defaults {
    /// Monte-Carlo forward passes per sample.
    pub const MC_RUNS: usize = 50;
    /// Dropout probability used when producing the runs.
    pub const DROPOUT_P: f64 = 0.2;
    /// Welch-test significance threshold: p at or above this is "uncertain".
    pub const P_THRESHOLD: f64 = 0.05;
}

/// Variances below this count as zero for the Welch degenerate rules.
const VAR_FLOOR: f64 = 1e-18;
/// Mean gap below this counts as equal under zero variance.
const MEAN_TOL: f64 = 1e-12;

/// Dense H x W x s logits grid for a single forward pass, row-major
/// (row, col, class).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsGrid {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl LogitsGrid {
    pub fn zeros(height: usize, width: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            classes,
            data: vec![0.0; height * width * classes],
        }
    }

    pub fn from_data(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::Dimension(format!(
                "{} logits for {}x{}x{}",
                data.len(),
                height,
                width,
                classes
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.classes;
        &self.data[base..base + self.classes]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let base = (row * self.width + col) * self.classes;
        &mut self.data[base..base + self.classes]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// N_D x H x W x s Monte-Carlo logits tensor, row-major
/// (run, row, col, class).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsStack {
    runs: usize,
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl LogitsStack {
    pub fn new(runs: usize, height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if runs < 2 {
            return Err(Error::Schema(format!("logits stack needs at least 2 runs, got {runs}")));
        }
        if data.len() != runs * height * width * classes {
            return Err(Error::Dimension(format!(
                "{} logits for {}x{}x{}x{}",
                data.len(),
                runs,
                height,
                width,
                classes
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite logit".into()));
        }
        Ok(Self {
            runs,
            height,
            width,
            classes,
            data,
        })
    }

    pub fn from_runs(grids: Vec<LogitsGrid>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Schema("empty logits stack".into()))?;
        let (h, w, s) = (first.height, first.width, first.classes);
        let mut data = Vec::with_capacity(grids.len() * h * w * s);
        for g in &grids {
            if (g.height, g.width, g.classes) != (h, w, s) {
                return Err(Error::Dimension("mismatched run shapes in stack".into()));
            }
            data.extend_from_slice(&g.data);
        }
        Self::new(grids.len(), h, w, s, data)
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn logit(&self, run: usize, row: usize, col: usize, class: usize) -> f32 {
        self.data[((run * self.height + row) * self.width + col) * self.classes + class]
    }

    #[inline]
    fn pixel(&self, run: usize, row: usize, col: usize) -> &[f32] {
        let base = ((run * self.height + row) * self.width + col) * self.classes;
        &self.data[base..base + self.classes]
    }

    /// Per-class softmax averaged over runs, one pixel at a time.
    fn mean_softmax_grid(&self) -> Vec<f64> {
        let (h, w, s) = (self.height, self.width, self.classes);
        let mut acc = vec![0.0f64; h * w * s];
        let mut probs = vec![0.0f64; s];
        for run in 0..self.runs {
            for row in 0..h {
                for col in 0..w {
                    let logits = self.pixel(run, row, col);
                    softmax_f64(logits, &mut probs);
                    let base = (row * w + col) * s;
                    for (a, p) in acc[base..base + s].iter_mut().zip(&probs) {
                        *a += p;
                    }
                }
            }
        }
        let inv = 1.0 / self.runs as f64;
        for a in &mut acc {
            *a *= inv;
        }
        acc
    }

    /// Writes the stack in the binary container: magic `PPHL`, four
    /// little-endian u32 (runs, height, width, classes), then the tensor as
    /// little-endian f32 in (run, row, col, class) order.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PPHL")?;
        for dim in [self.runs, self.height, self.width, self.classes] {
            let v = u32::try_from(dim).map_err(|_| Error::Schema("stack dimension exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PPHL" {
            return Err(Error::Schema("bad logits magic, expected `PPHL`".into()));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [runs, height, width, classes] = dims;
        let count = runs
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(classes))
            .ok_or_else(|| Error::Schema("logits stack dimensions overflow".into()))?;
        let mut payload = vec![0u8; count * 4];
        r.read_exact(&mut payload)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(runs, height, width, classes, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

fn softmax_f64(logits: &[f32], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l as f64 - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Two-tailed Welch's t-test p-value with Welch-Satterthwaite degrees of
/// freedom. When both sample variances vanish, the p-value degenerates to 1
/// for equal means and 0 otherwise.
pub fn welch_t_pvalue(a: &[f64], b: &[f64]) -> Result<f64> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::SampleTooShort { need: 2, got: s.len() });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va < VAR_FLOOR && vb < VAR_FLOOR {
        return Ok(if (ma - mb).abs() <= MEAN_TOL { 1.0 } else { 0.0 });
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(student_t_two_tailed(t, dof))
}

/// Sample mean and unbiased variance.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Hardened argmax of the MC-mean softmax (the segmentation estimate used
/// for depth-flip agreement), with no uncertainty reasoning.
pub fn mc_mean_argmax(stack: &LogitsStack) -> MaskGrid {
    let (h, w, s) = (stack.height(), stack.width(), stack.classes());
    let mean = stack.mean_softmax_grid();
    let mut grid = MaskGrid::new(w, h);
    for row in 0..h {
        for col in 0..w {
            let probs = &mean[(row * w + col) * s..(row * w + col + 1) * s];
            grid.set(row, col, argmax(probs) as u16);
        }
    }
    grid
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Monte-Carlo pseudo-label: per pixel, take the class with the highest
/// MC-mean softmax; keep it only when a Welch test between the top-two
/// classes' raw logits is significant (p below `threshold`), otherwise mark
/// the pixel [`UNCERTAIN`]. Argmax ties break to the lower class index.
pub fn mc_pseudo_label(stack: &LogitsStack, threshold: f64) -> MaskGrid {
    let (h, w, s) = (stack.height(), stack.width(), stack.classes());
    let mut grid = MaskGrid::new(w, h);
    if s < 2 {
        return grid; // single class: everything is that class
    }
    let mean = stack.mean_softmax_grid();
    let mut va = vec![0.0f64; stack.runs()];
    let mut vb = vec![0.0f64; stack.runs()];
    for row in 0..h {
        for col in 0..w {
            let probs = &mean[(row * w + col) * s..(row * w + col + 1) * s];
            let top = argmax(probs);
            let mut second = usize::MAX;
            for (i, v) in probs.iter().enumerate() {
                if i == top {
                    continue;
                }
                if second == usize::MAX || *v > probs[second] {
                    second = i;
                }
            }
            for run in 0..stack.runs() {
                let logits = stack.pixel(run, row, col);
                va[run] = logits[top] as f64;
                vb[run] = logits[second] as f64;
            }
            let p = welch_t_pvalue(&va, &vb).expect("runs >= 2 by construction");
            grid.set(row, col, if p < threshold { top as u16 } else { UNCERTAIN });
        }
    }
    grid
}

/// Marks every pixel labelled with an occluded plane's class as
/// [`UNCERTAIN`]. Errors when the map carries a class outside its category.
pub fn apply_visibility_mask(
    label: &MaskGrid,
    map: &PlanarMap,
    registry: &Registry,
) -> Result<MaskGrid> {
    let cat = registry.category(&map.category_id)?;
    let range = cat.class_range();
    let mut occluded = Vec::new();
    for poly in &map.planes {
        if !range.contains(&poly.class_id) {
            return Err(Error::ForeignClass {
                class: poly.class_id,
                category: cat.id.clone(),
            });
        }
        if !poly.visible {
            occluded.push(poly.class_id);
        }
    }
    let mut out = label.clone();
    if occluded.is_empty() {
        return Ok(out);
    }
    for cell in out.cells_mut() {
        if occluded.contains(cell) {
            *cell = UNCERTAIN;
        }
    }
    Ok(out)
}

/// Marks labelled pixels that disagree with the rendered planar map as
/// [`UNCERTAIN`]. Background pixels are exempt unless `exempt_background` is
/// cleared; already-uncertain pixels stay uncertain.
pub fn plane_agreement_mask(
    label: &MaskGrid,
    rendered: &MaskGrid,
    exempt_background: bool,
) -> Result<MaskGrid> {
    if !label.same_shape(rendered) {
        return Err(Error::Dimension(format!(
            "label {}x{} vs rendered {}x{}",
            label.width(),
            label.height(),
            rendered.width(),
            rendered.height()
        )));
    }
    let mut out = label.clone();
    for (cell, &r) in out.cells_mut().iter_mut().zip(rendered.cells()) {
        let l = *cell;
        if l == UNCERTAIN || (l == 0 && exempt_background) {
            continue;
        }
        if l != r {
            *cell = UNCERTAIN;
        }
    }
    Ok(out)
}

/// Options for [`generate_semantic_pseudo_label`].
#[derive(Debug, Clone, Copy)]
pub struct SemanticLabelConfig {
    pub p_threshold: f64,
    pub exempt_background: bool,
    pub viewport: Viewport,
}

impl SemanticLabelConfig {
    pub fn new(viewport: Viewport) -> Self {
        Self {
            p_threshold: defaults::P_THRESHOLD,
            exempt_background: true,
            viewport,
        }
    }
}

/// Full semantic pseudo-label pipeline: Monte-Carlo label, depth-flip
/// resolution against the hardened MC argmax, occluded-plane masking, then
/// plane-agreement masking. Returns the label and the chosen depth sign.
pub fn generate_semantic_pseudo_label(
    stack: &LogitsStack,
    x: &KeypointSet3D,
    y: &KeypointSet2D,
    registry: &Registry,
    category_id: &str,
    cfg: &SemanticLabelConfig,
) -> Result<(MaskGrid, i8)> {
    let label = mc_pseudo_label(stack, cfg.p_threshold);
    let seg_estimate = mc_mean_argmax(stack);
    let (sign, map) = resolve_depth_flip(x, y, registry, category_id, &seg_estimate, &cfg.viewport)?;
    let label = apply_visibility_mask(&label, &map, registry)?;
    let rendered = rasterize(&map, stack.width(), stack.height());
    let label = plane_agreement_mask(&label, &rendered, cfg.exempt_background)?;
    Ok((label, sign))
}
