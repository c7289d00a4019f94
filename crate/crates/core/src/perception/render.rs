//! Point-splat depth rendering with a z-buffer, plus the image exports:
//! 16-bit millimeter depth, 8-bit closeness intensity (nearer is whiter)
//! and the jet colormap.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::CameraModel;
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Dense depth map in meters; invalid pixels hold +infinity.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    depths: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depths: vec![f64::INFINITY; width * height],
        }
    }

    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depths[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.depth(x, y).is_finite()
    }

    /// z-buffer write: nearer point wins.
    pub fn write_min(&mut self, x: usize, y: usize, z: f64) {
        let slot = &mut self.depths[y * self.width + x];
        if z < *slot {
            *slot = z;
        }
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| d.is_finite()).count()
    }

    pub fn fully_invalid(&self) -> bool {
        self.valid_count() == 0
    }

    /// Min and max over valid pixels.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for &d in &self.depths {
            if d.is_finite() {
                range = Some(match range {
                    None => (d, d),
                    Some((lo, hi)) => (lo.min(d), hi.max(d)),
                });
            }
        }
        range
    }

    /// Normalized closeness per pixel: 1 at the nearest valid depth, 0 at
    /// the farthest, `None` when invalid. A constant-depth image maps to 1.
    pub fn closeness(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.depth(x, y);
        if !d.is_finite() {
            return None;
        }
        let (lo, hi) = self.depth_range()?;
        if hi - lo <= 0.0 {
            return Some(1.0);
        }
        Some((hi - d) / (hi - lo))
    }

    /// Closeness for the whole image with the range computed once.
    pub fn closeness_map(&self) -> Vec<Option<f64>> {
        let Some((lo, hi)) = self.depth_range() else {
            return vec![None; self.depths.len()];
        };
        let span = hi - lo;
        self.depths
            .iter()
            .map(|&d| {
                if !d.is_finite() {
                    None
                } else if span <= 0.0 {
                    Some(1.0)
                } else {
                    Some((hi - d) / span)
                }
            })
            .collect()
    }
}

/// Renders the scene cloud through the pinhole model with z-buffering.
/// Every point splats a disc of `splat_radius_px` pixels. A scene entirely
/// behind the camera yields a fully invalid image.
pub fn render_depth(scene: &Scene, camera: &CameraModel, splat_radius_px: u32) -> Result<DepthImage> {
    camera.validate()?;
    let mut image = DepthImage::new(camera.width, camera.height);
    let r = splat_radius_px as i64;
    let r2 = r * r;
    for point in &scene.cloud.points {
        let Some((u, v, z)) = camera.project(&point.position) else {
            continue;
        };
        let px = u.round() as i64;
        let py = v.round() as i64;
        for dv in -r..=r {
            for du in -r..=r {
                if du * du + dv * dv > r2 {
                    continue;
                }
                let (x, y) = (px + du, py + dv);
                if x < 0 || y < 0 || x >= camera.width as i64 || y >= camera.height as i64 {
                    continue;
                }
                image.write_min(x as usize, y as usize, z);
            }
        }
    }
    Ok(image)
}

/// Classic piecewise-linear jet lookup for v in [0, 1].
pub fn jet_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let channel = |center: f64| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// Writes the jet-colormapped closeness image; invalid pixels are black.
pub fn export_colormap(depth: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let closeness = depth.closeness_map();
    let mut img: RgbImage = ImageBuffer::new(depth.width as u32, depth.height as u32);
    for (i, pixel) in img.pixels_mut().enumerate() {
        *pixel = match closeness[i] {
            Some(v) => Rgb(jet_color(v)),
            None => Rgb([0, 0, 0]),
        };
    }
    img.save(path.as_ref())
        .map_err(|e| Error::parse(path.as_ref().display().to_string(), e.to_string()))?;
    Ok(())
}

/// Writes the 8-bit closeness image (nearer is whiter); invalid pixels are
/// black.
pub fn export_intensity(depth: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let closeness = depth.closeness_map();
    let mut img: GrayImage = ImageBuffer::new(depth.width as u32, depth.height as u32);
    for (i, pixel) in img.pixels_mut().enumerate() {
        let value = closeness[i].map_or(0u8, |v| (v * 255.0).round() as u8);
        *pixel = Luma([value]);
    }
    img.save(path.as_ref())
        .map_err(|e| Error::parse(path.as_ref().display().to_string(), e.to_string()))?;
    Ok(())
}

/// Writes raw depth as 16-bit PNG in millimeters (rounded); invalid pixels
/// are zero.
pub fn export_depth_mm(depth: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(depth.width as u32, depth.height as u32);
    for y in 0..depth.height {
        for x in 0..depth.width {
            let d = depth.depth(x, y);
            let value = if d.is_finite() {
                (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            };
            img.put_pixel(x as u32, y as u32, Luma([value]));
        }
    }
    img.save(path.as_ref())
        .map_err(|e| Error::parse(path.as_ref().display().to_string(), e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedPoint, SurfaceCloud};
    use crate::scene::{Aabb, Scene, SupportPlane};
    use nalgebra::Vector3;

    fn wrap_scene(cloud: SurfaceCloud) -> Scene {
        Scene::new(
            cloud,
            Aabb::new(Vector3::repeat(-2.0), Vector3::repeat(2.0)),
            SupportPlane {
                point: Vector3::new(0.0, 0.0, -1.0),
                normal: Vector3::z(),
            },
            Vec::new(),
        )
        .unwrap()
    }

    fn camera() -> CameraModel {
        CameraModel::top_down(64, 48, 100.0, 1.0)
    }

    #[test]
    fn single_point_on_axis_hits_principal_pixel() {
        // Point 0.5 m below the 1 m camera: camera depth 0.5.
        let cloud = SurfaceCloud::new(
            vec![OrientedPoint::new(Vector3::new(0.0, 0.0, 0.5), Vector3::z())],
            "one",
        );
        let scene = wrap_scene(cloud);
        let depth = render_depth(&scene, &camera(), 0).unwrap();
        assert_eq!(depth.valid_count(), 1);
        assert!((depth.depth(32, 24) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let cloud = SurfaceCloud::new(
            vec![
                OrientedPoint::new(Vector3::new(0.0, 0.0, 0.5), Vector3::z()),
                OrientedPoint::new(Vector3::new(0.0, 0.0, 0.2), Vector3::z()),
            ],
            "ray",
        );
        let scene = wrap_scene(cloud);
        let depth = render_depth(&scene, &camera(), 0).unwrap();
        assert!((depth.depth(32, 24) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scene_behind_camera_renders_fully_invalid() {
        let cloud = SurfaceCloud::new(
            vec![OrientedPoint::new(Vector3::new(0.0, 0.0, 2.0), Vector3::z())],
            "behind",
        );
        let scene = wrap_scene(cloud);
        let depth = render_depth(&scene, &camera(), 1).unwrap();
        assert!(depth.fully_invalid());
    }

    /// Analytic oracle: a dense plane 1 m from the camera renders with
    /// constant depth 1.0 on every valid pixel.
    #[test]
    fn plane_renders_at_constant_depth() {
        let mut points = Vec::new();
        for i in -60..=60 {
            for j in -60..=60 {
                points.push(OrientedPoint::new(
                    Vector3::new(i as f64 * 0.005, j as f64 * 0.005, 0.0),
                    Vector3::z(),
                ));
            }
        }
        let scene = wrap_scene(SurfaceCloud::new(points, "plane"));
        let depth = render_depth(&scene, &camera(), 1).unwrap();
        assert!(depth.valid_count() > 1000);
        for y in 0..depth.height {
            for x in 0..depth.width {
                if depth.is_valid(x, y) {
                    assert!((depth.depth(x, y) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    /// Exhaustive z-buffer correctness: no scene point projects to a valid
    /// pixel with smaller depth than the stored value.
    #[test]
    fn no_point_beats_the_z_buffer() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let points: Vec<OrientedPoint> = (0..400)
            .map(|_| {
                OrientedPoint::new(
                    Vector3::new(
                        (rng.random::<f64>() - 0.5) * 0.4,
                        (rng.random::<f64>() - 0.5) * 0.4,
                        rng.random::<f64>() * 0.3,
                    ),
                    Vector3::z(),
                )
            })
            .collect();
        let scene = wrap_scene(SurfaceCloud::new(points, "random"));
        let cam = camera();
        let depth = render_depth(&scene, &cam, 0).unwrap();
        for p in &scene.cloud.points {
            if let Some((u, v, z)) = cam.project(&p.position) {
                let (x, y) = (u.round() as i64, v.round() as i64);
                if x >= 0 && y >= 0 && (x as usize) < cam.width && (y as usize) < cam.height {
                    let stored = depth.depth(x as usize, y as usize);
                    assert!(stored <= z + 1e-12);
                }
            }
        }
    }

    #[test]
    fn closeness_endpoints_and_uniform_convention() {
        let cloud = SurfaceCloud::new(
            vec![
                OrientedPoint::new(Vector3::new(-0.1, 0.0, 0.5), Vector3::z()),
                OrientedPoint::new(Vector3::new(0.1, 0.0, 0.2), Vector3::z()),
            ],
            "two",
        );
        let scene = wrap_scene(cloud);
        let depth = render_depth(&scene, &camera(), 0).unwrap();
        let mut values = Vec::new();
        for y in 0..depth.height {
            for x in 0..depth.width {
                if let Some(v) = depth.closeness(x, y) {
                    values.push((depth.depth(x, y), v));
                }
            }
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Nearest depth (z = 0.5 camera depth for the nearer point) maps to
        // v = 1, farthest to v = 0.
        assert_eq!(values.first().unwrap().1, 1.0);
        assert_eq!(values.last().unwrap().1, 0.0);

        let uniform = SurfaceCloud::new(
            vec![OrientedPoint::new(Vector3::new(0.0, 0.0, 0.5), Vector3::z())],
            "uniform",
        );
        let depth = render_depth(&wrap_scene(uniform), &camera(), 0).unwrap();
        assert_eq!(depth.closeness(32, 24), Some(1.0));
    }

    /// Re-computation oracle: closeness is monotone along a depth gradient.
    #[test]
    fn gradient_plane_has_monotone_closeness() {
        let mut points = Vec::new();
        for i in -50..=50 {
            for j in -50..=50 {
                let x = i as f64 * 0.004;
                points.push(OrientedPoint::new(
                    Vector3::new(x, j as f64 * 0.004, 0.25 * x),
                    Vector3::z(),
                ));
            }
        }
        let scene = wrap_scene(SurfaceCloud::new(points, "ramp"));
        let depth = render_depth(&scene, &camera(), 1).unwrap();
        let y = 24;
        let mut previous: Option<(f64, f64)> = None;
        for x in 0..depth.width {
            if let Some(v) = depth.closeness(x, y) {
                let d = depth.depth(x, y);
                if let Some((pd, pv)) = previous {
                    if d > pd {
                        assert!(v <= pv + 1e-12);
                    } else if d < pd {
                        assert!(v >= pv - 1e-12);
                    }
                }
                previous = Some((d, v));
            }
        }
    }

    #[test]
    fn jet_endpoints_match_convention() {
        assert_eq!(jet_color(0.0), [0, 0, 128]);
        assert_eq!(jet_color(1.0), [128, 0, 0]);
        let mid = jet_color(0.5);
        assert!(mid[1] > 200);
    }

    #[test]
    fn png_exports_round_trip_16_bit_depths() {
        let cloud = SurfaceCloud::new(
            vec![
                OrientedPoint::new(Vector3::new(-0.05, 0.0, 0.5), Vector3::z()),
                OrientedPoint::new(Vector3::new(0.05, 0.0, 0.2), Vector3::z()),
            ],
            "two",
        );
        let scene = wrap_scene(cloud);
        let cam = camera();
        let depth = render_depth(&scene, &cam, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.png");
        export_depth_mm(&depth, &path).unwrap();
        let img = image::open(&path).unwrap().into_luma16();
        // Camera depths: 1.0 - 0.5 = 0.5 m -> 500 mm; 1.0 - 0.2 = 0.8 m.
        let mut nonzero: Vec<u16> = img.pixels().map(|p| p.0[0]).filter(|&v| v != 0).collect();
        nonzero.sort_unstable();
        assert_eq!(nonzero, vec![500, 800]);

        export_colormap(&depth, dir.path().join("cm.png")).unwrap();
        export_intensity(&depth, dir.path().join("gray.png")).unwrap();
    }
}
