//! Fixed feature extractors feeding the implicit decoders: a multi-scale
//! shape encoding from voxel grids, pixel-aligned colors from an image
//! pyramid, and normalized camera depth.

use std::sync::Arc;

use crate::diffmath::{SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Camera, GridKind, GridLayout, Image, Vec3, VoxelGrid};

/// Samples per level: center, then +x, -x, +y, -y, +z, -z.
pub const STENCIL: usize = 7;

/// Feature layout: `STENCIL * (shape_levels + 1)` shape values, three colors
/// per image level, then depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Pooling steps L; the pyramid has L + 1 levels.
    pub shape_levels: usize,
    /// Image pyramid levels K (at least 1).
    pub image_levels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            shape_levels: 2,
            image_levels: 2,
        }
    }
}

impl EncoderConfig {
    pub fn shape_dim(&self) -> usize {
        STENCIL * (self.shape_levels + 1)
    }

    pub fn image_dim(&self) -> usize {
        3 * self.image_levels
    }

    pub fn feature_dim(&self) -> usize {
        self.shape_dim() + self.image_dim() + 1
    }
}

/// Layout after one 2x pooling step: resolution halves (floor), spacing
/// doubles, the first cell center sits between the first two children.
pub fn pooled_layout(layout: &GridLayout) -> Result<GridLayout> {
    let mut res = [0; 3];
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        res[a] = layout.resolution[a] / 2;
        spacing[a] = 2.0 * layout.spacing[a];
    }
    let half = Vec3::new(layout.spacing[0], layout.spacing[1], layout.spacing[2]) * 0.5;
    GridLayout::new(res, layout.origin + half, spacing)
}

/// Averaging map from a grid to its pooled grid.
pub fn pool_matrix(layout: &GridLayout) -> Result<(SparseMatrix, GridLayout)> {
    let out = pooled_layout(layout)?;
    let mut m = SparseMatrix::new(layout.len());
    for idx in 0..out.len() {
        let [i, j, k] = out.coords(idx);
        let mut row = Vec::with_capacity(8);
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    row.push((layout.index(2 * i + dx, 2 * j + dy, 2 * k + dz), 0.125));
                }
            }
        }
        m.push_row(row);
    }
    Ok((m, out))
}

/// Level 0 is the source grid; level l+1 averages 2x2x2 blocks of level l.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePyramid {
    pub levels: Vec<VoxelGrid>,
    /// Offset used by the sampling stencil, one level-0 cell per axis.
    pub step: [f64; 3],
}

/// Rejects pyramids whose coarsest level would have fewer than two cells on
/// some axis.
pub fn build_shape_pyramid(grid: &VoxelGrid, levels: usize) -> Result<ShapePyramid> {
    check_depth(&grid.layout, levels)?;
    let mut out = vec![grid.clone()];
    for _ in 0..levels {
        let prev = out.last().unwrap();
        let (m, layout) = pool_matrix(&prev.layout)?;
        let kind = match prev.kind {
            GridKind::Label => GridKind::Occupancy,
            k => k,
        };
        out.push(VoxelGrid {
            layout,
            kind,
            values: m.apply(&prev.values),
        });
    }
    Ok(ShapePyramid {
        levels: out,
        step: grid.layout.spacing,
    })
}

fn check_depth(layout: &GridLayout, levels: usize) -> Result<()> {
    let need = 1usize
        .checked_shl(levels as u32 + 1)
        .ok_or_else(|| Error::invalid("pyramid too deep"))?;
    if layout.resolution.iter().any(|&r| r < need) {
        return Err(Error::invalid(format!(
            "resolution {:?} too small for {levels} pooling levels (need {need} per axis)",
            layout.resolution
        )));
    }
    Ok(())
}

fn stencil_points(x: Vec3, step: [f64; 3]) -> [Vec3; STENCIL] {
    let (hx, hy, hz) = (Vec3::x() * step[0], Vec3::y() * step[1], Vec3::z() * step[2]);
    [x, x + hx, x - hx, x + hy, x - hy, x + hz, x - hz]
}

fn stencil_value(layout: &GridLayout, values: &[f64], p: Vec3) -> f64 {
    layout
        .trilinear_stencil(p)
        .iter()
        .fold(0.0, |acc, &(i, w)| acc + w * values[i])
}

impl ShapePyramid {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Stencil samples per level, coarsest level first.
    pub fn encode(&self, x: Vec3) -> Vec<f64> {
        let pts = stencil_points(x, self.step);
        let mut out = Vec::with_capacity(STENCIL * self.levels.len());
        for grid in self.levels.iter().rev() {
            for &p in &pts {
                out.push(stencil_value(&grid.layout, &grid.values, p));
            }
        }
        out
    }
}

pub fn shape_encoding(pyramid: &ShapePyramid, x: Vec3) -> Vec<f64> {
    pyramid.encode(x)
}

/// The shape encoding as sparse maps, so it can be recorded on a tape with
/// the level-0 values as a variable.
#[derive(Clone, Debug)]
pub struct ShapeEncoder {
    layouts: Vec<GridLayout>,
    pools: Vec<Arc<SparseMatrix>>,
    step: [f64; 3],
}

impl ShapeEncoder {
    pub fn new(layout: &GridLayout, levels: usize) -> Result<Self> {
        check_depth(layout, levels)?;
        let mut layouts = vec![*layout];
        let mut pools = Vec::new();
        for _ in 0..levels {
            let (m, next) = pool_matrix(layouts.last().unwrap())?;
            pools.push(Arc::new(m));
            layouts.push(next);
        }
        Ok(Self {
            layouts,
            pools,
            step: layout.spacing,
        })
    }

    pub fn levels(&self) -> usize {
        self.pools.len()
    }

    pub fn dim(&self) -> usize {
        STENCIL * self.layouts.len()
    }

    /// Rows `i * STENCIL + s` sample stencil point `s` of `points[i]` on `level`.
    pub fn stencil_matrix(&self, level: usize, points: &[Vec3]) -> SparseMatrix {
        let layout = &self.layouts[level];
        let mut m = SparseMatrix::new(layout.len());
        for &x in points {
            for p in stencil_points(x, self.step) {
                m.push_row(layout.trilinear_stencil(p));
            }
        }
        m
    }

    /// Precomputed stencil maps for a fixed point batch, coarsest first.
    pub fn plan(&self, points: &[Vec3]) -> Vec<Arc<SparseMatrix>> {
        (0..self.layouts.len())
            .rev()
            .map(|l| Arc::new(self.stencil_matrix(l, points)))
            .collect()
    }

    /// `[n x dim]` shape features from level-0 values held in `grid`.
    pub fn record(&self, tape: &mut Tape, grid: Var, plan: &[Arc<SparseMatrix>]) -> Result<Var> {
        let mut level_vars = vec![grid];
        for (l, pool) in self.pools.iter().enumerate() {
            let prev = level_vars[l];
            let v = tape.sparse(prev, pool.clone(), &[self.layouts[l + 1].len()])?;
            level_vars.push(v);
        }
        let mut parts = Vec::with_capacity(plan.len());
        for (m, &v) in plan.iter().zip(level_vars.iter().rev()) {
            let n = m.rows() / STENCIL;
            parts.push(tape.sparse(v, m.clone(), &[n, STENCIL])?);
        }
        tape.concat_cols(&parts)
    }
}

/// `levels[k]` is the image downsampled `k` times.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePyramid {
    pub levels: Vec<Image>,
}

impl ImagePyramid {
    pub fn new(image: &Image, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("image pyramid needs at least one level"));
        }
        if (image.width.min(image.height) >> (levels - 1)) == 0 {
            return Err(Error::invalid(format!(
                "{}x{} image too small for {levels} pyramid levels",
                image.width, image.height
            )));
        }
        let mut out = vec![image.clone()];
        for _ in 1..levels {
            let next = out.last().unwrap().downsample();
            out.push(next);
        }
        Ok(Self { levels: out })
    }

    /// Bilinear colors at level-0 pixel coordinate `uv`, finest level first.
    pub fn feature(&self, uv: [f64; 2]) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.levels.len());
        let mut scale = 1.0;
        for img in &self.levels {
            out.extend(img.bilinear(uv[0] * scale, uv[1] * scale));
            scale *= 0.5;
        }
        out
    }
}

pub fn pixel_feature(pyramid: &ImagePyramid, uv: [f64; 2]) -> Vec<f64> {
    pyramid.feature(uv)
}

pub fn depth_encoding(camera: &Camera, x: Vec3) -> f64 {
    camera.normalized_depth(x)
}

/// Image and depth part for points in front of the camera.
pub fn view_features(image: &ImagePyramid, camera: &Camera, x: Vec3) -> Result<Vec<f64>> {
    let (uv, _) = camera.project(x)?;
    let mut out = image.feature(uv);
    out.push(depth_encoding(camera, x));
    Ok(out)
}

/// `(shape | image | depth)` for one point.
pub fn assemble_features(shape: &ShapePyramid, image: &ImagePyramid, camera: &Camera, x: Vec3) -> Result<Vec<f64>> {
    let mut out = shape.encode(x);
    out.extend(view_features(image, camera, x)?);
    Ok(out)
}

/// Features of many points as an `[n x d]` tensor.
pub fn assemble_batch(shape: &ShapePyramid, image: &ImagePyramid, camera: &Camera, points: &[Vec3]) -> Result<Tensor> {
    let rows = crate::par::map_slice(points, |&x| assemble_features(shape, image, camera, x));
    let d = STENCIL * shape.levels.len() + 3 * image.levels.len() + 1;
    let mut data = Vec::with_capacity(points.len() * d);
    for r in rows {
        data.extend(r?);
    }
    Tensor::matrix(points.len(), d, data)
}

/// Image and depth part of many points as an `[n x (3K + 1)]` tensor.
pub fn view_batch(image: &ImagePyramid, camera: &Camera, points: &[Vec3]) -> Result<Tensor> {
    let rows = crate::par::map_slice(points, |&x| view_features(image, camera, x));
    let d = 3 * image.levels.len() + 1;
    let mut data = Vec::with_capacity(points.len() * d);
    for r in rows {
        data.extend(r?);
    }
    Tensor::matrix(points.len(), d, data)
}

/// Check a decoder's input width against an encoder layout.
pub fn check_decoder_input(config: &EncoderConfig, input_dim: usize) -> Result<()> {
    if config.feature_dim() != input_dim {
        return Err(Error::shape(format!(
            "decoder expects {input_dim} features, encoder produces {}",
            config.feature_dim()
        )));
    }
    Ok(())
}
