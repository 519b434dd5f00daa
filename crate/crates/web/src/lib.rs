//! Browser demo: a generated sequence kept in memory, rendered frames, its
//! extracted surface and a small occlusion fit with adjustable lambda.

use trecon::geometry::masked_iou;
use trecon::pipeline::{run_voxel_stage, Clip, TrainConfig};
use trecon::synthgen::{generate_sequence, OrbitCamera, PaletteKind, Sequence, SequenceSpec};
use wasm_bindgen::prelude::*;

/// Surface statistics returned by [`Demo::surface`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub area: f64,
    pub volume: f64,
    pub watertight: bool,
}

/// Result of [`Demo::fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitSummary {
    pub masked_iou: f64,
    pub iou: f64,
    pub final_loss: f64,
}

#[wasm_bindgen]
pub struct Demo {
    seq: Sequence,
}

fn js_err(e: trecon::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

impl Demo {
    pub fn create(seed: u64, frames: usize, amplitude: f64, size: usize, orbit_deg: f64) -> trecon::Result<Demo> {
        let spec = SequenceSpec {
            frame_count: frames,
            seed,
            amplitude,
            palette: PaletteKind::PerRegion,
            camera: OrbitCamera {
                orbit_deg_per_frame: orbit_deg,
                ..Default::default()
            },
            image_width: size,
            image_height: size,
            voxel_resolution: 16,
            ..Default::default()
        };
        Ok(Demo {
            seq: generate_sequence(&spec)?,
        })
    }

    /// Frame `k` as RGBA bytes, background transparent.
    pub fn rgba(&self, k: usize) -> Option<Vec<u8>> {
        let f = self.seq.frames.get(k)?;
        let mut out = Vec::with_capacity(4 * f.mask.len());
        for (i, &m) in f.mask.iter().enumerate() {
            for c in &f.image.data[3 * i..3 * i + 3] {
                out.push((c * 255.0).round() as u8);
            }
            out.push(if m { 255 } else { 0 });
        }
        Some(out)
    }

    pub fn surface(&self, k: usize) -> Option<SurfaceSummary> {
        let m = &self.seq.frames.get(k)?.gt_mesh;
        Some(SurfaceSummary {
            vertices: m.vertices.len(),
            triangles: m.triangles.len(),
            area: m.surface_area(),
            volume: m.volume(),
            watertight: m.is_watertight(),
        })
    }

    /// Fits the first three frames with a quarter of frame 1's occupied
    /// voxels hidden and scores the hidden region.
    pub fn fit(&self, lambda: f64, steps: usize, seed: u64) -> trecon::Result<FitSummary> {
        let mut cfg = TrainConfig {
            frames: 3.min(self.seq.len()),
            seed,
            voxel_steps: steps,
            occlude_frame: Some(1),
            ..Default::default()
        };
        cfg.weights.lambda = lambda;
        cfg.weights.mu = 0.0;
        let clip = Clip::new(&self.seq, &cfg)?;
        let out = run_voxel_stage(&self.seq, &clip, &cfg)?;
        let gt = &self.seq.frames[1].gt_voxels;
        let hidden = clip.hidden_region(1).expect("frame 1 is occluded");
        let pred = out.predictor.binary(1);
        Ok(FitSummary {
            masked_iou: masked_iou(&pred, gt, &hidden)?,
            iou: trecon::geometry::voxel_iou(&pred, gt)?,
            final_loss: out.history.last().map_or(f64::NAN, |r| r.total),
        })
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, frames: u32, amplitude: f64, size: u32, orbit_deg: f64) -> Result<Demo, JsValue> {
        Demo::create(seed as u64, frames as usize, amplitude, size as usize, orbit_deg).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> u32 {
        self.seq.len() as u32
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.seq.spec.image_width as u32
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.seq.spec.image_height as u32
    }

    /// RGBA pixels of frame `k`, ready for `ImageData`.
    pub fn frame_rgba(&self, k: u32) -> Result<Vec<u8>, JsValue> {
        self.rgba(k as usize)
            .ok_or_else(|| JsValue::from_str("frame outside the sequence"))
    }

    /// `[vertices, triangles, area, volume, watertight]` of frame `k`.
    pub fn surface_stats(&self, k: u32) -> Result<Vec<f64>, JsValue> {
        let s = self
            .surface(k as usize)
            .ok_or_else(|| JsValue::from_str("frame outside the sequence"))?;
        Ok(vec![
            s.vertices as f64,
            s.triangles as f64,
            s.area,
            s.volume,
            s.watertight as u8 as f64,
        ])
    }

    /// `[masked_iou, iou, final_loss]` of a lambda fit.
    pub fn temporal_fit(&self, lambda: f64, steps: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
        let f = self.fit(lambda, steps as usize, seed as u64).map_err(js_err)?;
        Ok(vec![f.masked_iou, f.iou, f.final_loss])
    }
}
