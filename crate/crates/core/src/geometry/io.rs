//! Mesh, image and grid files.
//!
//! * meshes: Wavefront OBJ with `v x y z r g b` vertex colors;
//! * images: binary PPM (`P6`) for RGB, PGM (`P5`) for masks, 8 bits;
//! * grids: raw little-endian `f32` payload plus a `.hdr` text sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::grid::{GridKind, GridLayout, VoxelGrid};
use super::image::Image;
use super::mesh::TriMesh;
use super::Vec3;
use crate::error::{Error, Result};
use crate::kv::{join_floats, KvDoc};

pub const GRID_FORMAT_VERSION: u32 = 1;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    write_file(path, s.as_bytes())
}

/// Reads `v` and `f` records; vertex ids are the vertex order.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not utf-8"))?;
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", lineno + 1));
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(|t| t.parse().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                match nums.len() {
                    3 => colors.push([0.5; 3]),
                    6 => colors.push([nums[3], nums[4], nums[5]]),
                    _ => return Err(bad("vertex needs 3 or 6 values")),
                }
                vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| bad("bad face index"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mesh = TriMesh {
        vertices,
        triangles,
        colors,
        vertex_ids: (0..n).collect(),
    };
    mesh.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mesh)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Round every channel to the nearest multiple of 1/255 so the image
/// survives an 8-bit round trip unchanged.
pub fn quantize_image(img: &mut Image) {
    for v in &mut img.data {
        *v = to_byte(*v) as f64 / 255.0;
    }
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|&v| to_byte(v)));
    write_file(path, &bytes)
}

pub fn write_pgm(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(mask.iter().map(|&b| if b { 255u8 } else { 0 }));
    write_file(path, &bytes)
}

/// Parse a binary netpbm header; returns (width, height, payload offset).
fn netpbm_header(bytes: &[u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != magic {
        return Err(Error::format(
            path,
            format!("expected {magic}, found {}", fields[0]),
        ));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad header value `{s}`")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format(path, "only 8-bit images are supported"));
    }
    Ok((w, h, pos + 1))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let (w, h, off) = netpbm_header(&bytes, "P6", path)?;
    let payload = bytes
        .get(off..off + 3 * w * h)
        .ok_or_else(|| Error::format(path, "truncated pixel data"))?;
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(w, h, data, None).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_pgm(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let bytes = read_file(path)?;
    let (w, h, off) = netpbm_header(&bytes, "P5", path)?;
    let payload = bytes
        .get(off..off + w * h)
        .ok_or_else(|| Error::format(path, "truncated pixel data"))?;
    Ok((payload.iter().map(|&b| b >= 128).collect(), w, h))
}

pub fn grid_header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Writes `path` (payload) and `path.hdr` (header). Values are stored as `f32`.
pub fn write_grid(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let l = &grid.layout;
    let mut hdr = KvDoc::new();
    hdr.set("format", "trecon-grid");
    hdr.set("version", GRID_FORMAT_VERSION);
    hdr.set(
        "resolution",
        format!(
            "{} {} {}",
            l.resolution[0], l.resolution[1], l.resolution[2]
        ),
    );
    hdr.set("origin", join_floats(l.origin.as_slice()));
    hdr.set("spacing", join_floats(&l.spacing));
    hdr.set("kind", grid.kind.tag());
    hdr.save(&grid_header_path(path))?;
    let mut bytes = Vec::with_capacity(4 * grid.values.len());
    for &v in &grid.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_grid(path: &Path) -> Result<VoxelGrid> {
    let hpath = grid_header_path(path);
    let hdr = KvDoc::load(&hpath)?;
    if hdr.get("format") != Some("trecon-grid") {
        return Err(Error::format(&hpath, "not a grid header"));
    }
    let version = hdr.require("version", &hpath)?;
    if version != GRID_FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            path: hpath,
            expected: GRID_FORMAT_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let res: Vec<usize> = hdr
        .require("resolution", &hpath)?
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::format(&hpath, "bad resolution"))
        })
        .collect::<Result<_>>()?;
    let origin = hdr.floats("origin", &hpath)?;
    let spacing = hdr.floats("spacing", &hpath)?;
    if res.len() != 3 || origin.len() != 3 || spacing.len() != 3 {
        return Err(Error::format(
            &hpath,
            "resolution, origin and spacing need 3 values",
        ));
    }
    let kind = GridKind::from_tag(hdr.require("kind", &hpath)?)
        .ok_or_else(|| Error::format(&hpath, "unknown grid kind"))?;
    let layout = GridLayout::new(
        [res[0], res[1], res[2]],
        Vec3::new(origin[0], origin[1], origin[2]),
        [spacing[0], spacing[1], spacing[2]],
    )
    .map_err(|e| Error::format(&hpath, e.to_string()))?;
    let bytes = read_file(path)?;
    if bytes.len() != 4 * layout.len() {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, expected {}",
                bytes.len(),
                4 * layout.len()
            ),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VoxelGrid::new(layout, kind, values).map_err(|e| Error::format(path, e.to_string()))
}
