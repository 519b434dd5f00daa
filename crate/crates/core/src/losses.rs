//! Training objectives. Each loss has a tape-recording form used during
//! training and a value form for evaluation; both share the same arithmetic.

use std::sync::Arc;

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::sampling::VoxelCorrespondence;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of occupied voxels in the voxel BCE; unoccupied get `1 - gamma`.
    pub gamma: f64,
    /// Temporal voxel consistency weight.
    pub lambda: f64,
    /// Temporal color consistency weight.
    pub mu: f64,
    /// Probability clamp for the logarithms.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            lambda: 0.5,
            mu: 0.5,
            eps: 1e-7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1)"));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::invalid("eps must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Mean over (supervised) voxels of
/// `-(gamma v ln p + (1 - gamma)(1 - v) ln(1 - p))`.
pub fn record_weighted_bce(
    tape: &mut Tape,
    pred: Var,
    gt: Arc<[f64]>,
    mask: Option<Arc<[bool]>>,
    w: &LossWeights,
) -> Result<Var> {
    tape.weighted_bce(pred, gt, mask, w.gamma, w.eps)
}

pub fn weighted_bce_voxel(pred: &VoxelGrid, gt: &VoxelGrid, w: &LossWeights) -> Result<f64> {
    if !pred.same_layout(gt) {
        return Err(Error::shape("prediction and ground truth grids differ"));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.values.clone()));
    let v = record_weighted_bce(&mut tape, p, gt.values.clone().into(), None, w)?;
    Ok(tape.value(v).item())
}

/// Voxel pairs of every ordered frame pair, resolved once per clip.
#[derive(Clone, Debug)]
pub struct TemporalPairs {
    /// (index of source prediction, index of target prediction, voxel pairs).
    pub pairs: Vec<(usize, usize, Arc<[(u32, u32)]>)>,
}

impl TemporalPairs {
    /// `frames[k]` is the sequence frame of prediction `k`; `corrs` must hold
    /// a map for every ordered pair of distinct entries.
    pub fn new(frames: &[usize], corrs: &[VoxelCorrespondence]) -> Result<Self> {
        let mut pairs = Vec::new();
        for (a, &t) in frames.iter().enumerate() {
            for (b, &l) in frames.iter().enumerate() {
                if a == b {
                    continue;
                }
                let c = corrs
                    .iter()
                    .find(|c| c.source == t && c.target == l)
                    .ok_or_else(|| Error::invalid(format!("missing correspondence {t} -> {l}")))?;
                pairs.push((a, b, c.pairs().into()));
            }
        }
        Ok(Self { pairs })
    }

    /// Keep only pairs whose source voxel satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(usize, u32) -> bool) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|(a, b, p)| {
                    let kept: Vec<(u32, u32)> = p.iter().copied().filter(|&(i, _)| keep(*a, i)).collect();
                    (*a, *b, kept.into())
                })
                .collect(),
        }
    }
}

/// Sum over ordered frame pairs of the mean squared difference between
/// corresponded voxels.
pub fn record_temporal_voxel(tape: &mut Tape, preds: &[Var], pairs: &TemporalPairs) -> Result<Var> {
    if preds.len() < 2 {
        return Err(Error::invalid("temporal loss needs at least two frames"));
    }
    let mut total: Option<Var> = None;
    for (a, b, p) in &pairs.pairs {
        if *a >= preds.len() || *b >= preds.len() {
            return Err(Error::invalid("correspondence refers to a missing prediction"));
        }
        let term = tape.paired_sq_diff(preds[*a], preds[*b], p.clone(), p.len() as f64)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::invalid("no correspondence pairs"))
}

pub fn temporal_voxel_loss(preds: &[VoxelGrid], frames: &[usize], corrs: &[VoxelCorrespondence]) -> Result<f64> {
    let pairs = TemporalPairs::new(frames, corrs)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = preds
        .iter()
        .map(|g| tape.constant(Tensor::vector(g.values.clone())))
        .collect();
    let v = record_temporal_voxel(&mut tape, &vars, &pairs)?;
    Ok(tape.value(v).item())
}

/// `(1/n) sum (s_i - o_i)^2`.
pub fn record_hybrid_geometry(tape: &mut Tape, pred: Var, labels: Arc<[f64]>) -> Result<Var> {
    tape.mse(pred, labels)
}

pub fn hybrid_geometry_loss(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions vs {} labels", pred.len(), labels.len())));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.to_vec()));
    let v = record_hybrid_geometry(&mut tape, p, labels.into())?;
    Ok(tape.value(v).item())
}

/// `(1/n) sum_i sum_c |c_hat - c|` for an `[n x 3]` prediction.
pub fn record_hybrid_color(tape: &mut Tape, pred: Var, labels: Arc<[f64]>) -> Result<Var> {
    let n = tape.value(pred).len() / 3;
    tape.mean_abs(pred, labels, None, n as f64)
}

pub fn hybrid_color_loss(pred: &[[f64; 3]], labels: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::shape(format!("{} predictions vs {} labels", pred.len(), labels.len())));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.iter().flatten().copied().collect()));
    let l: Arc<[f64]> = labels.iter().flatten().copied().collect();
    let v = record_hybrid_color(&mut tape, p, l)?;
    Ok(tape.value(v).item())
}

/// Sum over ordered frame pairs of `(1/n) sum_i |c_t(i) - c_l(i)|^2` for
/// per-frame `[n x 3]` predictions at tracked points.
pub fn record_temporal_color(tape: &mut Tape, preds: &[Var]) -> Result<Var> {
    if preds.len() < 2 {
        return Err(Error::invalid("temporal loss needs at least two frames"));
    }
    let len = tape.value(preds[0]).len();
    if preds.iter().any(|&p| tape.value(p).len() != len) {
        return Err(Error::shape("per-frame color predictions differ in size"));
    }
    let pairs: Arc<[(u32, u32)]> = (0..len as u32).map(|i| (i, i)).collect();
    let n = (len / 3) as f64;
    let mut total: Option<Var> = None;
    for a in 0..preds.len() {
        for b in 0..preds.len() {
            if a == b {
                continue;
            }
            let term = tape.paired_sq_diff(preds[a], preds[b], pairs.clone(), n)?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
    }
    Ok(total.unwrap())
}

pub fn temporal_color_loss(preds: &[Vec<[f64; 3]>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = preds
        .iter()
        .map(|p| tape.constant(Tensor::vector(p.iter().flatten().copied().collect())))
        .collect();
    let v = record_temporal_color(&mut tape, &vars)?;
    Ok(tape.value(v).item())
}

/// Which terms enter the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<T> {
    pub voxel: Option<T>,
    pub temporal_voxel: Option<T>,
    pub hybrid_geometry: Option<T>,
    pub hybrid_color: Option<T>,
    pub temporal_color: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        Self {
            voxel: None,
            temporal_voxel: None,
            hybrid_geometry: None,
            hybrid_color: None,
            temporal_color: None,
        }
    }
}

impl<T: Copy> LossTerms<T> {
    /// Terms with their multipliers: 1 for supervised terms, lambda and mu
    /// for the temporal ones.
    fn weighted(&self, w: &LossWeights) -> Vec<(T, f64)> {
        [
            (self.voxel, 1.0),
            (self.temporal_voxel, w.lambda),
            (self.hybrid_geometry, 1.0),
            (self.hybrid_color, 1.0),
            (self.temporal_color, w.mu),
        ]
        .into_iter()
        .filter_map(|(t, k)| t.map(|t| (t, k)))
        .collect()
    }
}

/// `L = voxel + lambda temporal_voxel + geometry + color + mu temporal_color`
/// over the present terms.
pub fn record_combined(tape: &mut Tape, terms: &LossTerms<Var>, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let mut total: Option<Var> = None;
    for (v, k) in terms.weighted(w) {
        let scaled = if k == 1.0 { v } else { tape.scale(v, k) };
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::invalid("no loss terms selected"))
}

pub fn combined_loss(terms: &LossTerms<f64>, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let parts = terms.weighted(w);
    if parts.is_empty() {
        return Err(Error::invalid("no loss terms selected"));
    }
    let mut total: Option<f64> = None;
    for (v, k) in parts {
        let scaled = if k == 1.0 { v } else { v * k };
        total = Some(total.map_or(scaled, |t| t + scaled));
    }
    Ok(total.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridKind, GridLayout};

    fn grids(vals: [f64; 2]) -> (VoxelGrid, VoxelGrid) {
        let l = GridLayout::centered_cube(1.0, 4).unwrap();
        (
            VoxelGrid::filled(l, GridKind::Occupancy, vals[0]),
            VoxelGrid::filled(l, GridKind::Occupancy, vals[1]),
        )
    }

    #[test]
    fn constant_offset_gives_two_delta_squared() {
        let (a, b) = grids([0.3, 0.55]);
        let l = a.layout;
        let ids = [
            VoxelCorrespondence { source: 0, target: 1, ..VoxelCorrespondence::identity(0, &l) },
            VoxelCorrespondence { source: 1, target: 0, ..VoxelCorrespondence::identity(0, &l) },
        ];
        let v = temporal_voxel_loss(&[a, b], &[0, 1], &ids).unwrap();
        assert!((v - 2.0 * 0.25f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn missing_map_is_rejected() {
        let (a, b) = grids([0.3, 0.5]);
        let only = [VoxelCorrespondence { source: 0, target: 1, ..VoxelCorrespondence::identity(0, &a.layout) }];
        assert!(temporal_voxel_loss(&[a, b], &[0, 1], &only).is_err());
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights { lambda: -0.1, ..Default::default() };
        let t = LossTerms { voxel: Some(1.0), ..Default::default() };
        assert!(combined_loss(&t, &w).is_err());
    }
}
