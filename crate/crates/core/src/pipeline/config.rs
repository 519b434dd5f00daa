use std::path::Path;

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::losses::LossWeights;

/// Settings for every training stage. Defaults are desk scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Clip length N; the clip is the first N frames of the sequence.
    pub frames: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub encoder: EncoderConfig,

    pub voxel_steps: usize,
    /// Adam rate on logits. The decoders' rate is far too slow here.
    pub voxel_lr: f64,
    /// Restrict the temporal voxel term to voxels occupied in the source frame.
    pub temporal_occupied_only: bool,

    pub implicit_steps: usize,
    pub implicit_lr: f64,
    pub implicit_batch: usize,
    pub samples: usize,
    /// Displacement std as a fraction of the body bounding-box diagonal.
    pub sigma_fraction: f64,
    pub uniform_fraction: f64,
    pub holdout_fraction: f64,

    pub color_steps: usize,
    pub color_lr: f64,
    pub color_batch: usize,
    pub color_samples: usize,

    /// Hidden layer widths of both decoders.
    pub hidden: Vec<usize>,
    /// Multiply the decoder learning rates by `lr_decay` every
    /// `lr_decay_epochs` passes over the training samples; 0 disables. The
    /// full-batch voxel stage keeps a constant rate.
    pub lr_decay: f64,
    pub lr_decay_epochs: usize,
    /// Feed ground-truth grids to the implicit stage instead of predictions.
    pub teacher_forcing: bool,
    /// Evaluation grid resolution as a multiple of the voxel resolution.
    pub eval_factor: usize,
    /// Withhold supervision of one clip frame on a region holding this share
    /// of its occupied voxels, and of its color on the side facing away from
    /// the camera.
    pub occlude_frame: Option<usize>,
    pub occlude_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            frames: 3,
            seed: 0,
            weights: LossWeights::default(),
            encoder: EncoderConfig::default(),
            voxel_steps: 300,
            voxel_lr: 0.05,
            temporal_occupied_only: false,
            implicit_steps: 2000,
            implicit_lr: 1e-3,
            implicit_batch: 256,
            samples: 10_000,
            sigma_fraction: 0.05,
            uniform_fraction: 0.1,
            holdout_fraction: 0.1,
            color_steps: 1500,
            color_lr: 1e-3,
            color_batch: 256,
            color_samples: 4000,
            hidden: vec![128, 64, 32],
            lr_decay: 0.1,
            lr_decay_epochs: 20,
            teacher_forcing: false,
            eval_factor: 2,
            occlude_frame: None,
            occlude_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn temporal_enabled(&self) -> bool {
        self.weights.lambda > 0.0 || self.weights.mu > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.frames == 0 {
            return Err(Error::invalid("clip needs at least one frame"));
        }
        if self.temporal_enabled() && self.frames < 2 {
            return Err(Error::invalid(
                "temporal losses need a clip of at least 2 frames; set lambda=0 and mu=0 or raise frames",
            ));
        }
        for (name, v) in [
            ("voxel_lr", self.voxel_lr),
            ("implicit_lr", self.implicit_lr),
            ("color_lr", self.color_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.implicit_batch == 0 || self.color_batch == 0 || self.samples < 2 || self.color_samples < 2 {
            return Err(Error::invalid("batch sizes and sample counts must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.eval_factor == 0 || self.encoder.image_levels == 0 {
            return Err(Error::invalid("hidden, eval_factor and image_levels must be positive"));
        }
        if !(self.sigma_fraction >= 0.0 && (0.0..=1.0).contains(&self.uniform_fraction)) {
            return Err(Error::invalid("sigma_fraction must be >= 0 and uniform_fraction in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout_fraction must lie in [0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if let Some(f) = self.occlude_frame {
            if f >= self.frames {
                return Err(Error::invalid(format!("occlude_frame {f} outside a {}-frame clip", self.frames)));
            }
            if !(self.occlude_fraction > 0.0 && self.occlude_fraction < 1.0) {
                return Err(Error::invalid("occlude_fraction must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("frames", self.frames);
        d.set("seed", self.seed);
        d.set("gamma", self.weights.gamma);
        d.set("lambda", self.weights.lambda);
        d.set("mu", self.weights.mu);
        d.set("eps", self.weights.eps);
        d.set("shape_levels", self.encoder.shape_levels);
        d.set("image_levels", self.encoder.image_levels);
        d.set("voxel_steps", self.voxel_steps);
        d.set("voxel_lr", self.voxel_lr);
        d.set("temporal_occupied_only", self.temporal_occupied_only);
        d.set("implicit_steps", self.implicit_steps);
        d.set("implicit_lr", self.implicit_lr);
        d.set("implicit_batch", self.implicit_batch);
        d.set("samples", self.samples);
        d.set("sigma_fraction", self.sigma_fraction);
        d.set("uniform_fraction", self.uniform_fraction);
        d.set("holdout_fraction", self.holdout_fraction);
        d.set("color_steps", self.color_steps);
        d.set("color_lr", self.color_lr);
        d.set("color_batch", self.color_batch);
        d.set("color_samples", self.color_samples);
        d.set(
            "hidden",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        d.set("lr_decay", self.lr_decay);
        d.set("lr_decay_epochs", self.lr_decay_epochs);
        d.set("teacher_forcing", self.teacher_forcing);
        d.set("eval_factor", self.eval_factor);
        d.set(
            "occlude_frame",
            self.occlude_frame.map_or("none".to_string(), |f| f.to_string()),
        );
        d.set("occlude_fraction", self.occlude_fraction);
        d
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(d: &KvDoc, _path: &Path) -> Result<Self> {
        let def = Self::default();
        let occlude_frame = match d.get("occlude_frame") {
            None | Some("none") => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::invalid(format!("cannot parse `occlude_frame={v}`")))?,
            ),
        };
        let cfg = Self {
            frames: d.parse_or("frames", def.frames)?,
            seed: d.parse_or("seed", def.seed)?,
            weights: LossWeights {
                gamma: d.parse_or("gamma", def.weights.gamma)?,
                lambda: d.parse_or("lambda", def.weights.lambda)?,
                mu: d.parse_or("mu", def.weights.mu)?,
                eps: d.parse_or("eps", def.weights.eps)?,
            },
            encoder: EncoderConfig {
                shape_levels: d.parse_or("shape_levels", def.encoder.shape_levels)?,
                image_levels: d.parse_or("image_levels", def.encoder.image_levels)?,
            },
            voxel_steps: d.parse_or("voxel_steps", def.voxel_steps)?,
            voxel_lr: d.parse_or("voxel_lr", def.voxel_lr)?,
            temporal_occupied_only: d.parse_or("temporal_occupied_only", def.temporal_occupied_only)?,
            implicit_steps: d.parse_or("implicit_steps", def.implicit_steps)?,
            implicit_lr: d.parse_or("implicit_lr", def.implicit_lr)?,
            implicit_batch: d.parse_or("implicit_batch", def.implicit_batch)?,
            samples: d.parse_or("samples", def.samples)?,
            sigma_fraction: d.parse_or("sigma_fraction", def.sigma_fraction)?,
            uniform_fraction: d.parse_or("uniform_fraction", def.uniform_fraction)?,
            holdout_fraction: d.parse_or("holdout_fraction", def.holdout_fraction)?,
            color_steps: d.parse_or("color_steps", def.color_steps)?,
            color_lr: d.parse_or("color_lr", def.color_lr)?,
            color_batch: d.parse_or("color_batch", def.color_batch)?,
            color_samples: d.parse_or("color_samples", def.color_samples)?,
            hidden: match d.get("hidden") {
                None => def.hidden,
                Some(v) => v
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| Error::invalid(format!("cannot parse `hidden={v}`")))?,
            },
            lr_decay: d.parse_or("lr_decay", def.lr_decay)?,
            lr_decay_epochs: d.parse_or("lr_decay_epochs", def.lr_decay_epochs)?,
            teacher_forcing: d.parse_or("teacher_forcing", def.teacher_forcing)?,
            eval_factor: d.parse_or("eval_factor", def.eval_factor)?,
            occlude_frame,
            occlude_fraction: d.parse_or("occlude_fraction", def.occlude_fraction)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Decoder decay schedule for `samples` training points drawn in
    /// batches of `batch`.
    pub(crate) fn decay(&self, samples: usize, batch: usize) -> crate::diffmath::StepDecay {
        let epoch = samples.div_ceil(batch.max(1)).max(1);
        crate::diffmath::StepDecay {
            factor: self.lr_decay,
            interval: (self.lr_decay_epochs * epoch) as u64,
        }
    }
}
