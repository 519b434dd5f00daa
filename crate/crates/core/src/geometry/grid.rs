use super::Vec3;
use crate::error::{Error, Result};

/// What the values of a [`VoxelGrid`] mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    /// Probabilities in `[0, 1]`.
    Occupancy,
    /// Unbounded pre-sigmoid scores.
    Logit,
    /// Binary ground truth, `0.0` or `1.0`.
    Label,
}

impl GridKind {
    pub fn tag(self) -> &'static str {
        match self {
            GridKind::Occupancy => "occupancy",
            GridKind::Logit => "logit",
            GridKind::Label => "label",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "occupancy" => Some(GridKind::Occupancy),
            "logit" => Some(GridKind::Logit),
            "label" => Some(GridKind::Label),
            _ => None,
        }
    }
}

/// Sample lattice: node `(i, j, k)` sits at `origin + (i, j, k) * spacing`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridLayout {
    pub resolution: [usize; 3],
    pub origin: Vec3,
    pub spacing: [f64; 3],
}

impl GridLayout {
    pub fn new(resolution: [usize; 3], origin: Vec3, spacing: [f64; 3]) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::invalid(format!(
                "grid resolution {resolution:?} must be at least 2 per axis"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "grid spacing {spacing:?} must be positive"
            )));
        }
        Ok(Self {
            resolution,
            origin,
            spacing,
        })
    }

    /// Nodes at the centers of `n^3` equal cells tiling the box `[lo, hi]`.
    pub fn cell_centers(lo: Vec3, hi: Vec3, n: usize) -> Result<Self> {
        let size = hi - lo;
        if size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("empty bounds"));
        }
        let spacing = [size.x / n as f64, size.y / n as f64, size.z / n as f64];
        let origin = lo + Vec3::new(spacing[0], spacing[1], spacing[2]) * 0.5;
        Self::new([n; 3], origin, spacing)
    }

    /// Cube `[-half, half]^3` split into `n^3` cells.
    pub fn centered_cube(half: f64, n: usize) -> Result<Self> {
        Self::cell_centers(Vec3::repeat(-half), Vec3::repeat(half), n)
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                i as f64 * self.spacing[0],
                j as f64 * self.spacing[1],
                k as f64 * self.spacing[2],
            )
    }

    pub fn position_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.position(i, j, k)
    }

    /// Lower corner of the cell box whose centers are the nodes.
    pub fn cell_min(&self) -> Vec3 {
        self.origin - Vec3::new(self.spacing[0], self.spacing[1], self.spacing[2]) * 0.5
    }

    pub fn cell_max(&self) -> Vec3 {
        self.cell_min()
            + Vec3::new(
                self.spacing[0] * self.resolution[0] as f64,
                self.spacing[1] * self.resolution[1] as f64,
                self.spacing[2] * self.resolution[2] as f64,
            )
    }

    /// Index of the cell (centered on a node) containing `p`, if any.
    pub fn cell_containing(&self, p: Vec3) -> Option<usize> {
        let lo = self.cell_min();
        let mut c = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - lo[a]) / self.spacing[a]).floor();
            if !(u >= 0.0 && u < self.resolution[a] as f64) {
                return None;
            }
            c[a] = u as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    /// The eight nodes surrounding `p` with trilinear weights. Points outside
    /// the node lattice are clamped onto it.
    pub fn trilinear_stencil(&self, p: Vec3) -> [(usize, f64); 8] {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let mut u = ((p[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (n - 1) as f64);
            // Node positions round-trip through `position` with a few ulps of
            // error; snap them so node samples are exact.
            if (u - u.round()).abs() < 1e-12 {
                u = u.round();
            }
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let mut out = [(0usize, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            *slot = (
                self.index(base[0] + dx, base[1] + dy, base[2] + dz),
                wx * wy * wz,
            );
        }
        out
    }
}

/// Dense scalar field on a [`GridLayout`], x varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub layout: GridLayout,
    pub kind: GridKind,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(layout: GridLayout, kind: GridKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(format!(
                "grid {:?} needs {} values, got {}",
                layout.resolution,
                layout.len(),
                values.len()
            )));
        }
        let grid = Self {
            layout,
            kind,
            values,
        };
        grid.check_range()?;
        Ok(grid)
    }

    pub fn filled(layout: GridLayout, kind: GridKind, value: f64) -> Self {
        Self {
            values: vec![value; layout.len()],
            layout,
            kind,
        }
    }

    pub fn from_fn(layout: GridLayout, kind: GridKind, f: impl Fn(Vec3) -> f64) -> Self {
        let values = (0..layout.len())
            .map(|i| f(layout.position_of(i)))
            .collect();
        Self {
            layout,
            kind,
            values,
        }
    }

    fn check_range(&self) -> Result<()> {
        let ok = match self.kind {
            GridKind::Occupancy => self.values.iter().all(|v| (0.0..=1.0).contains(v)),
            GridKind::Label => self.values.iter().all(|&v| v == 0.0 || v == 1.0),
            GridKind::Logit => self.values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "grid values out of range for kind `{}`",
                self.kind.tag()
            )))
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.layout.resolution
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.layout.index(i, j, k)]
    }

    pub fn same_layout(&self, other: &VoxelGrid) -> bool {
        self.layout == other.layout
    }

    /// Exact trilinear blend of the eight surrounding nodes (clamped).
    pub fn trilinear_sample(&self, p: Vec3) -> f64 {
        self.layout
            .trilinear_stencil(p)
            .iter()
            .fold(0.0, |acc, &(i, w)| acc + w * self.values[i])
    }

    pub fn map(&self, kind: GridKind, f: impl Fn(f64) -> f64) -> Self {
        Self {
            layout: self.layout,
            kind,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Binary grid: 1 where the value exceeds `threshold`.
    pub fn threshold(&self, threshold: f64) -> Self {
        self.map(GridKind::Label, |v| if v > threshold { 1.0 } else { 0.0 })
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
