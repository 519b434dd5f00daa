//! On-disk dataset: `frames/NNNN.{obj,ppm,pgm,grid}` plus `manifest.txt`.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;

use super::{FrameBundle, Sequence, SequenceSpec};
use crate::error::{Error, Result};
use crate::geometry::{io, Camera, Vec3};
use crate::kv::{join_floats, KvDoc};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.txt";

fn frame_stem(f: usize) -> String {
    format!("frames/{f:04}")
}

fn camera_to_string(c: &Camera) -> String {
    let mut v = vec![c.fx, c.fy, c.cx, c.cy, c.width as f64, c.height as f64];
    v.extend(c.rotation.transpose().iter());
    v.extend(c.translation.iter());
    v.extend([c.near, c.far]);
    join_floats(&v)
}

fn camera_from_floats(v: &[f64], path: &Path) -> Result<Camera> {
    if v.len() != 20 {
        return Err(Error::format(path, "camera needs 20 values"));
    }
    let rotation = Matrix3::from_row_slice(&v[6..15]);
    Camera::new(
        v[0],
        v[1],
        v[2],
        v[3],
        v[4] as usize,
        v[5] as usize,
        rotation,
        Vec3::new(v[15], v[16], v[17]),
        v[18],
        v[19],
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes every frame and the manifest; returns the manifest path.
pub fn export_dataset(seq: &Sequence, dir: &Path) -> Result<PathBuf> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut m = KvDoc::new();
    m.set("format", "trecon-dataset");
    m.set("version", DATASET_FORMAT_VERSION);
    m.set("frames", seq.frames.len());
    for (k, v) in seq.spec.to_kv().iter() {
        m.set(format!("spec.{k}"), v);
    }
    for (f, fr) in seq.frames.iter().enumerate() {
        let stem = frame_stem(f);
        io::write_obj(&fr.gt_mesh, &dir.join(format!("{stem}.obj")))?;
        io::write_ppm(&fr.image, &dir.join(format!("{stem}.ppm")))?;
        io::write_pgm(
            &fr.mask,
            fr.image.width,
            fr.image.height,
            &dir.join(format!("{stem}.pgm")),
        )?;
        io::write_grid(&fr.gt_voxels, &dir.join(format!("{stem}.grid")))?;
        m.set(format!("frame.{f:04}.stem"), &stem);
        m.set(format!("frame.{f:04}.camera"), camera_to_string(&fr.camera));
    }
    let path = dir.join(MANIFEST_NAME);
    m.save(&path)?;
    Ok(path)
}

/// Accepts the dataset directory or the manifest path.
pub fn load_dataset(path: &Path) -> Result<Sequence> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m = KvDoc::load(&manifest)?;
    if m.get("format") != Some("trecon-dataset") {
        return Err(Error::format(&manifest, "not a dataset manifest"));
    }
    let version = m.require("version", &manifest)?;
    if version != DATASET_FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            path: manifest.clone(),
            expected: DATASET_FORMAT_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let mut spec_kv = KvDoc::new();
    for (k, v) in m.iter() {
        if let Some(rest) = k.strip_prefix("spec.") {
            spec_kv.set(rest, v);
        }
    }
    let spec = SequenceSpec::from_kv(&spec_kv, &manifest)?;
    let n: usize = m.parse_required("frames", &manifest)?;
    let mut frames = Vec::with_capacity(n);
    for f in 0..n {
        let stem = dir.join(m.require(&format!("frame.{f:04}.stem"), &manifest)?);
        let with_ext = |ext: &str| {
            let mut s = stem.clone().into_os_string();
            s.push(ext);
            PathBuf::from(s)
        };
        let camera = camera_from_floats(
            &m.floats(&format!("frame.{f:04}.camera"), &manifest)?,
            &manifest,
        )?;
        let image = io::read_ppm(&with_ext(".ppm"))?;
        let (mask, w, h) = io::read_pgm(&with_ext(".pgm"))?;
        if (w, h) != (image.width, image.height) {
            return Err(Error::format(
                with_ext(".pgm"),
                "mask size differs from image",
            ));
        }
        frames.push(FrameBundle {
            image,
            mask,
            camera,
            gt_mesh: io::read_obj(&with_ext(".obj"))?,
            gt_voxels: io::read_grid(&with_ext(".grid"))?,
        });
    }
    Ok(Sequence { spec, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_sequence;

    fn spec() -> SequenceSpec {
        SequenceSpec {
            frame_count: 2,
            seed: 11,
            image_width: 40,
            image_height: 32,
            voxel_resolution: 12,
            surface_cell: 0.06,
            ..Default::default()
        }
    }

    #[test]
    fn export_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let seq = generate_sequence(&spec()).unwrap();
        let manifest = export_dataset(&seq, dir.path()).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        assert_eq!(
            text.lines()
                .filter(|l| l.ends_with(".stem") || l.contains(".stem="))
                .count(),
            2
        );
        assert_eq!(load_dataset(dir.path()).unwrap(), seq);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq = generate_sequence(&spec()).unwrap();
        let manifest = export_dataset(&seq, dir.path()).unwrap();
        let text = std::fs::read_to_string(&manifest)
            .unwrap()
            .replace("version=1", "version=7");
        std::fs::write(&manifest, text).unwrap();
        assert!(matches!(
            load_dataset(&manifest),
            Err(Error::VersionMismatch { .. })
        ));
    }
}
