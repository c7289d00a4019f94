//! Deterministic synthetic geometry: imprint scenes with known ground
//! truth, simple object clouds and meshes for clutter generation, and pose
//! perturbation helpers. Shared by tests, benches and the scene generator.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;

use crate::geometry::{OrientedPoint, RigidTransform, SurfaceCloud};
use crate::gripper::{GraspPose, GripperModel};
use crate::io::TriMesh;

/// Imprint cloud with ambient structure: exact copies of both fingertip
/// patches at `pose` (normals flipped to the object convention) joined by a
/// tab top surface and surrounded by a base plane with a clearance moat
/// under the fingers. The result looks like a graspable tab on a table and
/// gives ISF a recoverable basin around the ground truth.
pub fn imprint_tab_cloud(gripper: &GripperModel, pose: &GraspPose) -> SurfaceCloud {
    let (f1, f2) = gripper
        .transformed_finger_surfaces(pose)
        .expect("pose width within limits");
    let mut points: Vec<OrientedPoint> = Vec::new();
    for cloud in [&f1, &f2] {
        points.extend(
            cloud
                .points
                .iter()
                .map(|p| OrientedPoint::new(p.position, -p.normal)),
        );
    }

    // Patch extent in the gripper frame drives the ambient dimensions.
    let (lo, hi) = gripper.finger_patches[0]
        .bounds()
        .expect("patch non-empty");
    let z_top = hi.z;
    let z_bot = lo.z;
    let half_len = hi.y.max(-lo.y);

    let frame = RigidTransform::new(pose.rotation, pose.translation);
    let mut ambient = Vec::new();
    // Tab top connecting the two imprints.
    let top_halfspan = pose.width / 2.0 - 0.001;
    let step = 0.001;
    let mut x = -top_halfspan;
    while x <= top_halfspan + 1e-12 {
        let mut y = -half_len;
        while y <= half_len + 1e-12 {
            ambient.push(OrientedPoint::new(Vector3::new(x, y, z_top), Vector3::z()));
            y += step;
        }
        x += step;
    }
    // Base plane with a moat under the grasp.
    let base_half = 0.05_f64;
    let (moat_x, moat_y) = (0.02, 0.012);
    let step = 0.0015_f64;
    let n = (2.0 * base_half / step).round() as i64;
    for i in 0..=n {
        for j in 0..=n {
            let x = -base_half + i as f64 * step;
            let y = -base_half + j as f64 * step;
            if x.abs() < moat_x && y.abs() < moat_y {
                continue;
            }
            ambient.push(OrientedPoint::new(Vector3::new(x, y, z_bot), Vector3::z()));
        }
    }
    points.extend(ambient.iter().map(|p| frame.apply_point(p)));
    SurfaceCloud::new(points, "imprint-tab")
}

/// Uniformly random rotation via a normalized 4-Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    // Box-Muller pairs from uniform draws.
    let mut gauss = || {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let q = nalgebra::Quaternion::new(gauss(), gauss(), gauss(), gauss());
    UnitQuaternion::from_quaternion(q)
}

/// Uniform direction on the unit sphere.
pub fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random pose within the given rotation/translation/width perturbation
/// bounds around `base`; the width stays inside `limits`.
pub fn perturbed_pose(
    base: &GraspPose,
    max_angle: f64,
    max_translation: f64,
    max_width_delta: f64,
    limits: (f64, f64),
    rng: &mut impl Rng,
) -> GraspPose {
    let axis = random_direction(rng);
    let angle = rng.random::<f64>() * max_angle;
    let rot = UnitQuaternion::from_scaled_axis(axis * angle)
        .to_rotation_matrix()
        .into_inner();
    let dir = random_direction(rng);
    let dist = rng.random::<f64>().powf(1.0 / 3.0) * max_translation;
    let width = (base.width + (rng.random::<f64>() * 2.0 - 1.0) * max_width_delta)
        .clamp(limits.0, limits.1);
    GraspPose::new(rot * base.rotation, base.translation + dir * dist, width)
}

/// True when the two poses agree within the given rotation (radians),
/// translation and width tolerances.
pub fn pose_close(
    a: &GraspPose,
    b: &GraspPose,
    rot_tol: f64,
    trans_tol: f64,
    width_tol: f64,
) -> bool {
    let qa = UnitQuaternion::from_matrix(&a.rotation);
    let qb = UnitQuaternion::from_matrix(&b.rotation);
    qa.rotation_to(&qb).angle() <= rot_tol
        && (a.translation - b.translation).norm() <= trans_tol
        && (a.width - b.width).abs() <= width_tol
}

fn face_grid(
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    nu: usize,
    nv: usize,
    normal: Vector3<f64>,
    out: &mut Vec<OrientedPoint>,
) {
    for i in 0..=nu {
        for j in 0..=nv {
            let p = origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64);
            out.push(OrientedPoint::new(p, normal));
        }
    }
}

fn steps(len: f64, spacing: f64) -> usize {
    ((len / spacing).round() as usize).max(1)
}

/// Vertical plate standing on z = 0, centered at the origin: `thickness`
/// along x, `length` along y, `height` along z. Samples both side walls,
/// the two end walls and the top face.
pub fn standing_plate_cloud(
    thickness: f64,
    length: f64,
    height: f64,
    spacing: f64,
) -> SurfaceCloud {
    let (hx, hy) = (thickness / 2.0, length / 2.0);
    let mut points = Vec::new();
    // Side walls (the graspable faces).
    for sign in [1.0, -1.0] {
        face_grid(
            Vector3::new(sign * hx, -hy, 0.0),
            Vector3::new(0.0, length, 0.0),
            Vector3::new(0.0, 0.0, height),
            steps(length, spacing),
            steps(height, spacing),
            Vector3::new(sign, 0.0, 0.0),
            &mut points,
        );
    }
    // End walls.
    for sign in [1.0, -1.0] {
        face_grid(
            Vector3::new(-hx, sign * hy, 0.0),
            Vector3::new(thickness, 0.0, 0.0),
            Vector3::new(0.0, 0.0, height),
            steps(thickness, spacing),
            steps(height, spacing),
            Vector3::new(0.0, sign, 0.0),
            &mut points,
        );
    }
    // Top face.
    face_grid(
        Vector3::new(-hx, -hy, height),
        Vector3::new(thickness, 0.0, 0.0),
        Vector3::new(0.0, length, 0.0),
        steps(thickness, spacing),
        steps(length, spacing),
        Vector3::z(),
        &mut points,
    );
    SurfaceCloud::new(points, "plate")
}

/// Axis-aligned box resting on z = 0 (no bottom face), centered at the
/// origin in x/y.
pub fn box_cloud(ex: f64, ey: f64, ez: f64, spacing: f64) -> SurfaceCloud {
    let (hx, hy) = (ex / 2.0, ey / 2.0);
    let mut points = Vec::new();
    for sign in [1.0, -1.0] {
        face_grid(
            Vector3::new(sign * hx, -hy, 0.0),
            Vector3::new(0.0, ey, 0.0),
            Vector3::new(0.0, 0.0, ez),
            steps(ey, spacing),
            steps(ez, spacing),
            Vector3::new(sign, 0.0, 0.0),
            &mut points,
        );
        face_grid(
            Vector3::new(-hx, sign * hy, 0.0),
            Vector3::new(ex, 0.0, 0.0),
            Vector3::new(0.0, 0.0, ez),
            steps(ex, spacing),
            steps(ez, spacing),
            Vector3::new(0.0, sign, 0.0),
            &mut points,
        );
    }
    face_grid(
        Vector3::new(-hx, -hy, ez),
        Vector3::new(ex, 0.0, 0.0),
        Vector3::new(0.0, ey, 0.0),
        steps(ex, spacing),
        steps(ey, spacing),
        Vector3::z(),
        &mut points,
    );
    SurfaceCloud::new(points, "box")
}

/// Sphere of radius `r` resting on z = 0, sampled with a Fibonacci lattice.
pub fn sphere_cloud(r: f64, n: usize) -> SurfaceCloud {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let radius = (1.0 - z * z).sqrt();
            let theta = golden * i as f64;
            let dir = Vector3::new(radius * theta.cos(), radius * theta.sin(), z);
            OrientedPoint::new(dir * r + Vector3::new(0.0, 0.0, r), dir)
        })
        .collect();
    SurfaceCloud::new(points, "sphere")
}

/// Closed axis-aligned box mesh with the given extents, resting on z = 0.
pub fn box_mesh(ex: f64, ey: f64, ez: f64) -> TriMesh {
    let (hx, hy) = (ex / 2.0, ey / 2.0);
    let v = |x: f64, y: f64, z: f64| Vector3::new(x, y, z);
    let vertices = vec![
        v(-hx, -hy, 0.0),
        v(hx, -hy, 0.0),
        v(hx, hy, 0.0),
        v(-hx, hy, 0.0),
        v(-hx, -hy, ez),
        v(hx, -hy, ez),
        v(hx, hy, ez),
        v(-hx, hy, ez),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom (outward -z)
        [4, 5, 6],
        [4, 6, 7], // top
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 3, 7],
        [2, 7, 6], // +y
        [1, 2, 6],
        [1, 6, 5], // +x
        [3, 0, 4],
        [3, 4, 7], // -x
    ];
    TriMesh { vertices, faces }
}

/// Closed upright cylinder mesh, resting on z = 0.
pub fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> TriMesh {
    let mut vertices = Vec::new();
    for ring in 0..2 {
        let z = ring as f64 * height;
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom_center = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, 0.0));
    let top_center = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, height));
    let mut faces = Vec::new();
    for s in 0..segments as u32 {
        let next = (s + 1) % segments as u32;
        let (b0, b1) = (s, next);
        let (t0, t1) = (s + segments as u32, next + segments as u32);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom_center, b1, b0]);
        faces.push([top_center, t0, t1]);
    }
    TriMesh { vertices, faces }
}

/// UV-sphere mesh resting on z = 0.
pub fn sphere_mesh(radius: f64, rings: usize, segments: usize) -> TriMesh {
    let mut vertices = Vec::new();
    for r in 0..=rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vector3::new(
                radius * phi.sin() * theta.cos(),
                radius * phi.sin() * theta.sin(),
                radius * phi.cos() + radius,
            ));
        }
    }
    let mut faces = Vec::new();
    let seg = segments as u32;
    for r in 0..rings as u32 {
        for s in 0..seg {
            let next = (s + 1) % seg;
            let (a, b) = (r * seg + s, r * seg + next);
            let (c, d) = ((r + 1) * seg + s, (r + 1) * seg + next);
            if r != 0 {
                faces.push([a, b, d]);
            }
            if r != rings as u32 - 1 {
                faces.push([a, d, c]);
            }
        }
    }
    TriMesh { vertices, faces }
}
