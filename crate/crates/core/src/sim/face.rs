//! Synthetic 68-point face, pinhole camera and landmark stream emission.

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, Vec3};

pub const N_LANDMARKS: usize = 68;

pub const JAW: std::ops::Range<usize> = 0..17;
pub const EYES: std::ops::Range<usize> = 36..48;
pub const MOUTH: std::ops::Range<usize> = 48..68;
/// Inner-lip top and bottom centers.
pub const INNER_LIP_TOP: usize = 62;
pub const INNER_LIP_BOTTOM: usize = 66;

/// Pinhole intrinsics. Camera frame: z along the optical axis, x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl Intrinsics {
    /// Pixel coordinates and depth of a camera-frame point, if in view.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        if p.z <= 0.05 {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let inside = u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64;
        inside.then_some((u, v, p.z))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }
}

/// Camera pose looking from `eye` at `target` with world z as the up hint.
pub fn look_at(eye: Vec3, target: Vec3) -> PoseSE3 {
    let z = (target - eye).normalize();
    let mut x = z.cross(&Vec3::z());
    if x.norm() < 1e-9 {
        x = Vec3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    PoseSE3::new(eye, crate::geometry::UnitQuaternion::from_axes(&x, &y, &z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub timestamp: f64,
    pub camera: PoseSE3,
    pub intrinsics: Intrinsics,
    pub points: Vec<Landmark>,
    /// Index of a deliberately displaced landmark, kept for test bookkeeping.
    #[serde(default)]
    pub injected_outlier: Option<usize>,
}

impl LandmarkFrame {
    /// Lifts every visible landmark to world coordinates.
    pub fn world_points(&self) -> Vec<Option<Vec3>> {
        self.points
            .iter()
            .map(|l| {
                l.visible
                    .then(|| self.camera.transform_point(&self.intrinsics.unproject(l.u, l.v, l.depth)))
            })
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        self.points.iter().filter(|l| l.visible).count()
    }

    /// Builds a frame from world points, for tests and replay tooling.
    pub fn from_world(timestamp: f64, camera: PoseSE3, intrinsics: Intrinsics, pts: &[Option<Vec3>]) -> Self {
        let inv = camera.inverse();
        let points = pts
            .iter()
            .map(|p| match p.and_then(|w| intrinsics.project(&inv.transform_point(&w))) {
                Some((u, v, depth)) => Landmark { u, v, depth, visible: true },
                None => Landmark { u: 0.0, v: 0.0, depth: 0.0, visible: false },
            })
            .collect();
        Self { timestamp, camera, intrinsics, points, injected_outlier: None }
    }
}

/// Canonical face in the mouth frame: x to the face's left, y up, z out of
/// the face. Symmetric in x; mouth, eyes and each jaw half average to z = 0
/// and the mouth group is centered on the origin.
pub fn face_template(mouth_open: bool) -> [Vec3; N_LANDMARKS] {
    use std::f64::consts::PI;
    let mut p = [Vec3::zeros(); N_LANDMARKS];

    // jaw, 0 at the face's right ear, 8 at the chin
    let depth = |t: f64| -0.05 * t.cos().powi(2);
    let half_mean: f64 = (0..8).map(|i| depth(PI * i as f64 / 16.0)).sum::<f64>() / 8.0;
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let t = PI * i as f64 / 16.0;
        *q = Vec3::new(-0.068 * t.cos(), 0.045 - 0.095 * t.sin(), depth(t) - half_mean);
    }
    // brows
    for i in 0..5 {
        let x = 0.016 + 0.009 * i as f64;
        p[21 - i] = Vec3::new(-x, 0.085 - 0.002 * (i as f64 - 2.0).powi(2), 0.012);
        p[22 + i] = Vec3::new(x, 0.085 - 0.002 * (i as f64 - 2.0).powi(2), 0.012);
    }
    // nose bridge and base
    for i in 0..4 {
        p[27 + i] = Vec3::new(0.0, 0.068 - 0.012 * i as f64, 0.015 + 0.007 * i as f64);
    }
    for i in 0..5 {
        p[31 + i] = Vec3::new(-0.016 + 0.008 * i as f64, 0.025, 0.02 - 0.002 * (i as f64 - 2.0).abs());
    }
    // eyes, six points each from the corner nearest -x, over the top
    for (start, cx) in [(36usize, -0.032), (42usize, 0.032)] {
        for k in 0..6 {
            let a = PI - k as f64 * PI / 3.0;
            p[start + k] = Vec3::new(cx + 0.013 * a.cos(), 0.065 + 0.005 * a.sin(), 0.0);
        }
    }
    // outer lip 48..60 from the right corner over the top
    let (outer_h, inner_h) = if mouth_open { (0.02, 0.012) } else { (0.011, 0.002) };
    for i in 0..12 {
        let a = PI - i as f64 * PI / 6.0;
        p[48 + i] = Vec3::new(0.026 * a.cos(), outer_h * a.sin(), 0.0);
    }
    for i in 0..8 {
        let a = PI - i as f64 * PI / 4.0;
        p[60 + i] = Vec3::new(0.019 * a.cos(), inner_h * a.sin(), 0.0);
    }
    // snap the mouth group exactly onto its centroid
    let c = p[MOUTH].iter().fold(Vec3::zeros(), |a, q| a + q) / MOUTH.len() as f64;
    for q in &mut p[MOUTH] {
        *q -= Vec3::new(c.x, c.y, 0.0);
    }
    p
}

/// Settings for the synthetic landmark detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkNoise {
    /// Per-axis Gaussian noise on each landmark, meters.
    pub sigma: f64,
    /// Per-frame probability of displacing one landmark by a large jump.
    pub outlier_probability: f64,
    /// Range of jump lengths, meters.
    pub outlier_jump: [f64; 2],
}

impl Default for LandmarkNoise {
    fn default() -> Self {
        Self { sigma: 0.001, outlier_probability: 0.0, outlier_jump: [0.06, 0.10] }
    }
}

/// Shortest distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-15 && e <= 1e-15 {
        return r.norm();
    }
    if a <= 1e-15 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-15 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-15 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Everything the emitter needs to know about the scene at one instant.
pub struct FaceScene<'a> {
    pub timestamp: f64,
    pub mouth: &'a PoseSE3,
    pub mouth_open: bool,
    pub camera: &'a PoseSE3,
    pub intrinsics: &'a Intrinsics,
    /// Utensil capsule: flange point, tip point, radius.
    pub utensil: Option<(Vec3, Vec3, f64)>,
    /// Occlude the whole face, as a hand or cloth in front of it would.
    pub face_blocked: bool,
}

/// Projects the face template placed at the mouth pose into the camera.
pub fn emit_landmarks<R: Rng>(scene: &FaceScene, noise: &LandmarkNoise, rng: &mut R) -> LandmarkFrame {
    let template = face_template(scene.mouth_open);
    let gauss = Normal::new(0.0, noise.sigma.max(0.0)).expect("finite sigma");
    let mut world: Vec<Vec3> = template
        .iter()
        .map(|p| {
            let mut w = scene.mouth.transform_point(p);
            if noise.sigma > 0.0 {
                w += Vec3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
            }
            w
        })
        .collect();

    let mut injected = None;
    if noise.outlier_probability > 0.0 && rng.random_bool(noise.outlier_probability.min(1.0)) {
        let k = rng.random_range(0..N_LANDMARKS);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let len = rng.random_range(noise.outlier_jump[0]..=noise.outlier_jump[1]);
        world[k] += Vec3::from(dir) * len;
        injected = Some(k);
    }

    let origin = scene.camera.position;
    let occluded = |w: &Vec3| -> bool {
        if scene.face_blocked {
            return true;
        }
        match &scene.utensil {
            Some((a, b, r)) => segment_distance(&origin, w, a, b) < *r,
            None => false,
        }
    };
    let pts: Vec<Option<Vec3>> = world.iter().map(|w| (!occluded(w)).then_some(*w)).collect();
    let mut frame = LandmarkFrame::from_world(scene.timestamp, *scene.camera, *scene.intrinsics, &pts);
    frame.injected_outlier = injected;
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mouth() -> PoseSE3 {
        // face looks along world -x toward the robot, up is world z
        PoseSE3::new(
            Vec3::new(0.62, 0.22, 0.10),
            UnitQuaternion::from_axes(&Vec3::new(0.0, -1.0, 0.0), &Vec3::z(), &Vec3::new(-1.0, 0.0, 0.0)),
        )
    }

    fn camera() -> PoseSE3 {
        look_at(Vec3::new(0.25, 0.22, 0.2), mouth().position)
    }

    fn scene<'a>(m: &'a PoseSE3, c: &'a PoseSE3, k: &'a Intrinsics) -> FaceScene<'a> {
        FaceScene {
            timestamp: 0.0,
            mouth: m,
            mouth_open: true,
            camera: c,
            intrinsics: k,
            utensil: None,
            face_blocked: false,
        }
    }

    #[test]
    fn template_is_symmetric_and_centered() {
        let t = face_template(false);
        let c = t[MOUTH].iter().fold(Vec3::zeros(), |a, q| a + q) / 20.0;
        assert!(c.norm() < 1e-15);
        let jaw_right: f64 = t[0..8].iter().map(|p| p.z).sum();
        assert!(jaw_right.abs() < 1e-15);
        for (a, b) in [(0, 16), (36, 45), (48, 54), (60, 64), (31, 35)] {
            assert!((t[a].x + t[b].x).abs() < 1e-15 && (t[a].y - t[b].y).abs() < 1e-15);
        }
        assert!((t[INNER_LIP_TOP] - t[INNER_LIP_BOTTOM]).norm() < 0.01);
        let o = face_template(true);
        assert!((o[INNER_LIP_TOP] - o[INNER_LIP_BOTTOM]).norm() > 0.01);
    }

    #[test]
    fn clean_frontal_face_reprojects_exactly() {
        let (m, c, k) = (mouth(), camera(), Intrinsics::default());
        let noise = LandmarkNoise { sigma: 0.0, ..Default::default() };
        let f = emit_landmarks(&scene(&m, &c, &k), &noise, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(f.points.len(), N_LANDMARKS);
        assert_eq!(f.visible_count(), N_LANDMARKS);
        let template = face_template(true);
        for (w, t) in f.world_points().iter().zip(template.iter()) {
            assert!((w.unwrap() - m.transform_point(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn utensil_on_line_of_sight_hides_mouth() {
        let (m, c, k) = (mouth(), camera(), Intrinsics::default());
        let noise = LandmarkNoise { sigma: 0.0, ..Default::default() };
        let mut s = scene(&m, &c, &k);
        let a = c.position + (m.position - c.position) * 0.5;
        let b = c.position + (m.position - c.position) * 0.8;
        s.utensil = Some((a, b, 0.015));
        let f = emit_landmarks(&s, &noise, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(MOUTH.clone().all(|i| !f.points[i].visible));
        assert_eq!(f.points.len(), N_LANDMARKS);
    }

    #[test]
    fn face_behind_camera_is_invisible() {
        let (m, k) = (mouth(), Intrinsics::default());
        let c = look_at(Vec3::new(0.25, 0.22, 0.2), Vec3::new(-1.0, 0.22, 0.2));
        let noise = LandmarkNoise { sigma: 0.0, ..Default::default() };
        let f = emit_landmarks(&scene(&m, &c, &k), &noise, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(f.visible_count(), 0);
    }

    #[test]
    fn outlier_rate_matches_probability() {
        let (m, c, k) = (mouth(), camera(), Intrinsics::default());
        let noise = LandmarkNoise { sigma: 0.0, outlier_probability: 0.1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let clean = face_template(true).map(|p| m.transform_point(&p));
        let mut count = 0;
        for _ in 0..1000 {
            let f = emit_landmarks(&scene(&m, &c, &k), &noise, &mut rng);
            if let Some(i) = f.injected_outlier {
                count += 1;
                let moved = f.world_points()[i].map(|w| (w - clean[i]).norm());
                if let Some(d) = moved {
                    assert!(d > 0.05);
                }
            }
        }
        let rate = count as f64 / 1000.0;
        assert!((rate - 0.1).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn segment_distance_cases() {
        let d = segment_distance(&Vec3::zeros(), &Vec3::x(), &Vec3::new(0.5, 1.0, 0.0), &Vec3::new(0.5, 1.0, 1.0));
        assert!((d - 1.0).abs() < 1e-12);
        let d = segment_distance(&Vec3::zeros(), &Vec3::x(), &Vec3::new(2.0, 0.0, 0.0), &Vec3::new(3.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
    }
}
