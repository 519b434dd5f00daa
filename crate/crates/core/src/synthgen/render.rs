//! Z-buffer rasterizer with flat Lambertian shading.

use crate::error::Result;
use crate::geometry::{io::quantize_image, Camera, Image, TriMesh, Vec3};

pub const AMBIENT: f64 = 0.25;

/// Renders `mesh` on a black background. Triangles with a vertex closer than
/// the camera's near distance are skipped. Colors are interpolated
/// perspective-correctly and scaled by `AMBIENT + (1 - AMBIENT)|n·l|`.
/// Pixel values are rounded to 8 bits.
pub fn render_frame(
    mesh: &TriMesh,
    camera: &Camera,
    light_dir: Vec3,
) -> Result<(Image, Vec<bool>)> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let light = light_dir.try_normalize(1e-12).unwrap_or_else(Vec3::z);
    let mut image = Image::filled(w, h, [0.0; 3]);
    let mut mask = vec![false; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];

    let projected: Vec<Option<(f64, f64, f64)>> = mesh
        .vertices
        .iter()
        .map(|&p| {
            let c = camera.to_camera(p);
            (c.z >= camera.near).then(|| {
                (
                    camera.fx * c.x / c.z + camera.cx,
                    camera.fy * c.y / c.z + camera.cy,
                    c.z,
                )
            })
        })
        .collect();

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (Some(p0), Some(p1), Some(p2)) =
            (projected[tri[0]], projected[tri[1]], projected[tri[2]])
        else {
            continue;
        };
        let area = (p1.0 - p0.0) * (p2.1 - p0.1) - (p2.0 - p0.0) * (p1.1 - p0.1);
        if area.abs() < 1e-12 {
            continue;
        }
        let normal = mesh
            .triangle_cross(t)
            .try_normalize(1e-300)
            .unwrap_or_else(Vec3::z);
        let shade = AMBIENT + (1.0 - AMBIENT) * normal.dot(&light).abs();
        let colors = [
            mesh.colors[tri[0]],
            mesh.colors[tri[1]],
            mesh.colors[tri[2]],
        ];

        let xmin = p0.0.min(p1.0).min(p2.0).floor().max(0.0) as usize;
        let ymin = p0.1.min(p1.1).min(p2.1).floor().max(0.0) as usize;
        let xmax = (p0.0.max(p1.0).max(p2.0).ceil() as i64).min(w as i64 - 1);
        let ymax = (p0.1.max(p1.1).max(p2.1).ceil() as i64).min(h as i64 - 1);
        if xmax < 0 || ymax < 0 {
            continue;
        }
        for y in ymin..=ymax as usize {
            let py = y as f64 + 0.5;
            for x in xmin..=xmax as usize {
                let px = x as f64 + 0.5;
                let l0 = ((p1.0 - px) * (p2.1 - py) - (p2.0 - px) * (p1.1 - py)) / area;
                let l1 = ((p2.0 - px) * (p0.1 - py) - (p0.0 - px) * (p2.1 - py)) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let (w0, w1, w2) = (l0 / p0.2, l1 / p1.2, l2 / p2.2);
                let z = 1.0 / (w0 + w1 + w2);
                let idx = y * w + x;
                if z >= zbuf[idx] {
                    continue;
                }
                zbuf[idx] = z;
                mask[idx] = true;
                let b = [w0 * z, w1 * z, w2 * z];
                let mut rgb = [0.0; 3];
                for (ch, v) in rgb.iter_mut().enumerate() {
                    let c = b[0] * colors[0][ch] + b[1] * colors[1][ch] + b[2] * colors[2][ch];
                    *v = (c * shade).clamp(0.0, 1.0);
                }
                image.set_pixel(x, y, rgb);
            }
        }
    }
    quantize_image(&mut image);
    Ok((image, mask))
}

/// Direction the camera looks along, in world coordinates.
pub fn view_direction(camera: &Camera) -> Vec3 {
    camera.rotation.row(2).transpose()
}
