use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{InsideTester, TriMesh, Vec3};
use crate::rng::Stream;

pub const SAMPLES_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;
/// Default displacement std as a fraction of the mesh bounding-box diagonal.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.05;
pub const DEFAULT_UNIFORM_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Occupancy(Vec<f64>),
    Color(Vec<[f64; 3]>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Occupancy(v) => v.len(),
            Labels::Color(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupancy(&self) -> Option<&[f64]> {
        match self {
            Labels::Occupancy(v) => Some(v),
            Labels::Color(_) => None,
        }
    }

    pub fn colors(&self) -> Option<&[[f64; 3]]> {
        match self {
            Labels::Color(v) => Some(v),
            Labels::Occupancy(_) => None,
        }
    }
}

/// Labeled points of one source frame, with their tracked position in every
/// frame once `track_samples` has run.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub source_frame: usize,
    pub sigma: f64,
    pub points: Vec<Vec3>,
    pub labels: Labels,
    /// `tracked[t][i]` is point `i` carried to frame `t`; empty until tracked.
    pub tracked: Vec<Vec<Vec3>>,
    /// Points farther than 3 sigma from the source surface.
    pub far: Vec<bool>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        !self.tracked.is_empty()
    }

    /// Subset by index, keeping tracked positions.
    pub fn select(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            source_frame: self.source_frame,
            sigma: self.sigma,
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: match &self.labels {
                Labels::Occupancy(v) => Labels::Occupancy(idx.iter().map(|&i| v[i]).collect()),
                Labels::Color(v) => Labels::Color(idx.iter().map(|&i| v[i]).collect()),
            },
            tracked: self
                .tracked
                .iter()
                .map(|f| idx.iter().map(|&i| f[i]).collect())
                .collect(),
            far: idx.iter().map(|&i| self.far[i]).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let kind = match &self.labels {
            Labels::Occupancy(_) => "occupancy",
            Labels::Color(_) => "color",
        };
        let mut out = Vec::new();
        writeln!(
            out,
            "trecon-samples version={SAMPLES_FORMAT_VERSION} kind={kind} count={} frames={} source={} sigma={}",
            self.len(),
            self.tracked.len(),
            self.source_frame,
            self.sigma
        )
        .unwrap();
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        for i in 0..self.len() {
            self.points[i].iter().for_each(|&v| put(v));
            match &self.labels {
                Labels::Occupancy(l) => put(l[i]),
                Labels::Color(l) => l[i].iter().for_each(|&v| put(v)),
            }
            put(if self.far[i] { 1.0 } else { 0.0 });
            for f in &self.tracked {
                f[i].iter().for_each(|&v| put(v));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SampleSet> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("trecon-samples") {
            return Err(Error::format(path, "not a sample file"));
        }
        let kv: std::collections::HashMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::format(path, format!("missing `{k}`")));
        let version = get("version")?;
        if version != SAMPLES_FORMAT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                expected: SAMPLES_FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::format(path, format!("bad `{k}`"))) };
        let (count, frames, source) = (num("count")?, num("frames")?, num("source")?);
        let sigma: f64 = get("sigma")?.parse().map_err(|_| Error::format(path, "bad `sigma`"))?;
        let color = match get("kind")? {
            "occupancy" => false,
            "color" => true,
            other => return Err(Error::format(path, format!("unknown kind `{other}`"))),
        };
        let mut body = Vec::new();
        reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let per = 3 + if color { 3 } else { 1 } + 1 + 3 * frames;
        if body.len() != 8 * per * count {
            return Err(Error::format(path, "payload size does not match header"));
        }
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut points = Vec::with_capacity(count);
        let mut occ = Vec::new();
        let mut cols = Vec::new();
        let mut far = Vec::with_capacity(count);
        let mut tracked = vec![Vec::with_capacity(count); frames];
        for rec in vals.chunks_exact(per) {
            points.push(Vec3::new(rec[0], rec[1], rec[2]));
            let mut o = 3;
            if color {
                cols.push([rec[3], rec[4], rec[5]]);
                o += 3;
            } else {
                occ.push(rec[3]);
                o += 1;
            }
            far.push(rec[o] != 0.0);
            o += 1;
            for t in tracked.iter_mut() {
                t.push(Vec3::new(rec[o], rec[o + 1], rec[o + 2]));
                o += 3;
            }
        }
        Ok(SampleSet {
            source_frame: source,
            sigma,
            points,
            labels: if color { Labels::Color(cols) } else { Labels::Occupancy(occ) },
            tracked,
            far,
        })
    }
}

pub fn default_sigma(mesh: &TriMesh) -> f64 {
    mesh.bounds()
        .map(|(lo, hi)| DEFAULT_SIGMA_FRACTION * (hi - lo).norm())
        .unwrap_or(0.0)
}

/// Surface points displaced by isotropic Gaussian noise, labeled inside (1)
/// or outside (0).
pub fn sample_occupancy_points(mesh: &TriMesh, n: usize, sigma: f64, seed: u64) -> Result<SampleSet> {
    OccupancySampler {
        n,
        sigma,
        uniform_fraction: 0.0,
        bounds: (Vec3::repeat(-1.0), Vec3::repeat(1.0)),
    }
    .sample(mesh, 0, seed)
}

/// Surface-biased sampling with an optional share of points drawn uniformly
/// in `bounds`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancySampler {
    pub n: usize,
    pub sigma: f64,
    pub uniform_fraction: f64,
    pub bounds: (Vec3, Vec3),
}

impl OccupancySampler {
    pub fn sample(&self, mesh: &TriMesh, source_frame: usize, seed: u64) -> Result<SampleSet> {
        if self.n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.uniform_fraction) {
            return Err(Error::invalid("uniform fraction must lie in [0, 1]"));
        }
        let tester = InsideTester::new(mesh)?;
        let mut rng = Stream::new(seed);
        let n_uniform = (self.n as f64 * self.uniform_fraction).round() as usize;
        let n_surface = self.n - n_uniform;
        let mut points: Vec<Vec3> = mesh
            .sample_surface(n_surface, &mut rng)
            .into_iter()
            .map(|sp| mesh.point_at(sp))
            .collect();
        for p in &mut points {
            *p += Vec3::new(rng.gaussian(), rng.gaussian(), rng.gaussian()) * self.sigma;
        }
        let (lo, hi) = self.bounds;
        for _ in 0..n_uniform {
            points.push(Vec3::new(
                rng.uniform_range(lo.x, hi.x),
                rng.uniform_range(lo.y, hi.y),
                rng.uniform_range(lo.z, hi.z),
            ));
        }
        let labels = crate::par::map_slice(&points, |&p| tester.label(p));
        Ok(SampleSet {
            source_frame,
            sigma: self.sigma,
            far: vec![false; points.len()],
            points,
            labels: Labels::Occupancy(labels),
            tracked: Vec::new(),
        })
    }
}

/// Area-uniform surface points labeled with interpolated vertex colors.
pub fn sample_color_points(mesh: &TriMesh, m: usize, seed: u64) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    if mesh.colors.len() != mesh.vertices.len() {
        return Err(Error::invalid("mesh has no vertex colors"));
    }
    let mut rng = Stream::new(seed);
    let sps = mesh.sample_surface(m, &mut rng);
    Ok(SampleSet {
        source_frame: 0,
        sigma: 0.0,
        points: sps.iter().map(|&sp| mesh.point_at(sp)).collect(),
        labels: Labels::Color(sps.iter().map(|&sp| mesh.color_at(sp)).collect()),
        tracked: Vec::new(),
        far: vec![false; m],
    })
}
