//! Mouth-pose estimation from 68-point landmark frames.
//!
//! Landmarks are lifted to 3-D with their depth, filtered against a
//! registered reference face and the previous frame, then grouped into
//! cheek, eye and mouth regions. The mouth frame's normal is the normal of
//! the plane fitted through the left and right half-centroids of the three
//! groups, pointing toward the camera.

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, UnitQuaternion, Vec3};
use crate::perception::PerceptionError;
use crate::sim::face::{LandmarkFrame, EYES, INNER_LIP_BOTTOM, INNER_LIP_TOP, MOUTH, N_LANDMARKS};

/// Left/right halves of each group, used for the plane fit.
const HALF_GROUPS: [&[usize]; 6] = [
    &[0, 1, 2, 3, 4, 5, 6, 7],
    &[9, 10, 11, 12, 13, 14, 15, 16],
    &[36, 37, 38, 39, 40, 41],
    &[42, 43, 44, 45, 46, 47],
    &[48, 49, 50, 58, 59, 60, 61, 67],
    &[52, 53, 54, 55, 56, 63, 64, 65],
];

pub type LandmarkSet = [Option<Vec3>; N_LANDMARKS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MouthConfig {
    /// Rule (a): max distance from the aligned reference, m.
    pub reference_threshold: f64,
    /// Rule (b): max displacement from the last accepted position, m.
    pub max_displacement: f64,
    /// Rule (c): max relative deviation of eye pairwise distances.
    pub eye_deviation: f64,
    pub min_landmarks: usize,
    pub registration_frames: usize,
    pub registration_min_visible: usize,
    /// Age beyond which an estimate is flagged stale, s.
    pub stale_after: f64,
    /// Inner-lip gap that counts as open, m.
    pub open_gap: f64,
}

impl Default for MouthConfig {
    fn default() -> Self {
        Self {
            reference_threshold: 0.03,
            max_displacement: 0.05,
            eye_deviation: 0.25,
            min_landmarks: 30,
            registration_frames: 20,
            registration_min_visible: 60,
            stale_after: 2.0,
            open_gap: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouthEstimate {
    pub pose: PoseSE3,
    pub confidence: f64,
    pub timestamp: f64,
    pub open: bool,
}

impl MouthEstimate {
    pub fn is_stale(&self, now: f64, cfg: &MouthConfig) -> bool {
        now - self.timestamp > cfg.stale_after
    }
}

/// Registered reference face in its own mouth frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLandmarks {
    pub points: Vec<Vec3>,
    /// Triangulated surface area of the full reference, m².
    pub area: f64,
}

impl ReferenceLandmarks {
    fn eye_distance(&self, a: usize, b: usize) -> f64 {
        (self.points[a] - self.points[b]).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    Reference,
    Displacement,
    EyeModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedLandmarks {
    pub timestamp: f64,
    pub points: LandmarkSet,
    pub camera_position: Vec3,
    pub rejected: Vec<(usize, RejectRule)>,
    pub visible: usize,
}

impl AcceptedLandmarks {
    pub fn accepted_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

fn lift(frame: &LandmarkFrame) -> LandmarkSet {
    let mut out = [None; N_LANDMARKS];
    for (o, p) in out.iter_mut().zip(frame.world_points()) {
        *o = p;
    }
    out
}

fn centroid<'a>(pts: impl Iterator<Item = &'a Vec3>) -> Option<Vec3> {
    let (sum, n) = pts.fold((Vec3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn group_centroid(points: &LandmarkSet, idx: impl IntoIterator<Item = usize>) -> Option<Vec3> {
    let v: Vec<Vec3> = idx.into_iter().filter_map(|i| points[i]).collect();
    centroid(v.iter())
}

/// Least-squares rigid transform taking `src` onto `dst`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Option<PoseSE3> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let cs = centroid(src.iter())?;
    let cd = centroid(dst.iter())?;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let q = UnitQuaternion::from_matrix(&r);
    Some(PoseSE3::new(cd - q.rotate(&cs), q))
}

/// Surface area of a point set triangulated over a 2-D projection.
fn triangulated_area(pts3: &[Vec3], pts2: &[(f64, f64)]) -> f64 {
    if pts2.len() < 3 {
        return 0.0;
    }
    let points: Vec<delaunator::Point> = pts2.iter().map(|&(x, y)| delaunator::Point { x, y }).collect();
    let tri = delaunator::triangulate(&points);
    tri.triangles
        .chunks_exact(3)
        .map(|t| 0.5 * (pts3[t[1]] - pts3[t[0]]).cross(&(pts3[t[2]] - pts3[t[0]])).norm())
        .sum()
}

/// Builds the reference from exactly the configured number of frames.
pub fn register_reference(frames: &[LandmarkFrame], cfg: &MouthConfig) -> Result<ReferenceLandmarks, PerceptionError> {
    if frames.len() != cfg.registration_frames {
        return Err(PerceptionError::Registration(format!(
            "need {} frames, got {}",
            cfg.registration_frames,
            frames.len()
        )));
    }
    let lifted: Vec<LandmarkSet> = frames.iter().map(lift).collect();
    for (k, f) in lifted.iter().enumerate() {
        let n = f.iter().filter(|p| p.is_some()).count();
        if n < cfg.registration_min_visible {
            return Err(PerceptionError::Registration(format!("frame {k} has only {n} visible landmarks")));
        }
    }
    let mut median: LandmarkSet = [None; N_LANDMARKS];
    for (i, m) in median.iter_mut().enumerate() {
        let seen: Vec<Vec3> = lifted.iter().filter_map(|f| f[i]).collect();
        if seen.is_empty() {
            return Err(PerceptionError::Registration(format!("landmark {i} never visible")));
        }
        let med = |axis: usize| {
            let mut v: Vec<f64> = seen.iter().map(|p| p[axis]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        *m = Some(Vec3::new(med(0), med(1), med(2)));
    }
    let camera = frames[frames.len() - 1].camera.position;
    let pose = plane_pose(&median, &camera, None)?;
    let inv = pose.inverse();
    let points: Vec<Vec3> = median.iter().map(|p| inv.transform_point(&p.expect("all filled"))).collect();
    let flat: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    let area = triangulated_area(&points, &flat);
    Ok(ReferenceLandmarks { points, area })
}

/// Mouth frame from grouped landmarks. With a reference, missing mouth
/// landmarks are compensated so the origin stays at the full-group center.
fn plane_pose(points: &LandmarkSet, camera: &Vec3, reference: Option<&ReferenceLandmarks>) -> Result<PoseSE3, PerceptionError> {
    let halves: Vec<Vec3> = HALF_GROUPS.iter().filter_map(|g| group_centroid(points, g.iter().copied())).collect();
    if halves.len() < 3 {
        return Err(PerceptionError::Degenerate("fewer than three landmark groups visible"));
    }
    let c = centroid(halves.iter()).expect("nonempty");
    let mut m = SMatrix::<f64, 3, 6>::zeros();
    for (k, h) in halves.iter().enumerate() {
        m.set_column(k, &(h - c));
    }
    let svd = m.svd(true, false);
    let u = svd.u.ok_or(PerceptionError::Degenerate("plane fit failed"))?;
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if s[order[1]] < 1e-3 * s[order[0]].max(1e-12) {
        return Err(PerceptionError::Degenerate("group centroids are collinear"));
    }
    let mut z: Vec3 = u.column(order[2]).into();

    let mouth = group_centroid(points, MOUTH).ok_or(PerceptionError::Degenerate("no mouth landmarks"))?;
    let eyes = group_centroid(points, EYES).ok_or(PerceptionError::Degenerate("no eye landmarks"))?;
    if z.dot(&(camera - mouth)) < 0.0 {
        z = -z;
    }
    let up = eyes - mouth;
    let y = up - z * z.dot(&up);
    if y.norm() < 1e-9 {
        return Err(PerceptionError::Degenerate("eye direction parallel to the face normal"));
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let q = UnitQuaternion::from_axes(&x, &y, &z);

    let mut origin = mouth;
    if let Some(r) = reference {
        let seen: Vec<usize> = MOUTH.filter(|&i| points[i].is_some()).collect();
        if seen.len() < MOUTH.len() {
            let ref_seen = centroid(seen.iter().map(|&i| &r.points[i])).expect("nonempty");
            let ref_all = centroid(r.points[MOUTH].iter()).expect("nonempty");
            origin = mouth - q.rotate(&(ref_seen - ref_all));
        }
    }
    Ok(PoseSE3::new(origin, q))
}

/// Pose, confidence and open flag from accepted landmarks.
pub fn estimate_mouth_pose(
    accepted: &AcceptedLandmarks,
    reference: Option<&ReferenceLandmarks>,
    cfg: &MouthConfig,
) -> Result<MouthEstimate, PerceptionError> {
    let n = accepted.accepted_count();
    if n < cfg.min_landmarks {
        return Err(PerceptionError::TooFewLandmarks(n));
    }
    let pose = plane_pose(&accepted.points, &accepted.camera_position, reference)?;

    // visible surface from a Delaunay triangulation in the face plane
    let inv = pose.inverse();
    let idx: Vec<usize> = (0..N_LANDMARKS).filter(|&i| accepted.points[i].is_some()).collect();
    let pts3: Vec<Vec3> = idx.iter().map(|&i| accepted.points[i].expect("filtered")).collect();
    let pts2: Vec<(f64, f64)> = pts3.iter().map(|p| inv.transform_point(p)).map(|p| (p.x, p.y)).collect();
    let area = triangulated_area(&pts3, &pts2);
    let coverage = match reference {
        Some(r) if r.area > 0.0 => (area / r.area).min(1.0),
        _ => 1.0,
    };
    let confidence = (n as f64 / N_LANDMARKS as f64) * coverage;

    let open = match (accepted.points[INNER_LIP_TOP], accepted.points[INNER_LIP_BOTTOM]) {
        (Some(a), Some(b)) => (a - b).norm() > cfg.open_gap,
        _ => false,
    };
    Ok(MouthEstimate { pose, confidence, timestamp: accepted.timestamp, open })
}

/// Stateful landmark filter holding the last accepted position of each
/// landmark.
#[derive(Debug, Clone, Default)]
pub struct LandmarkFilter {
    last: Option<LandmarkSet>,
}

impl LandmarkFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn filter(
        &mut self,
        frame: &LandmarkFrame,
        reference: Option<&ReferenceLandmarks>,
        cfg: &MouthConfig,
    ) -> Result<AcceptedLandmarks, PerceptionError> {
        let mut points = lift(frame);
        let visible = points.iter().filter(|p| p.is_some()).count();
        let mut rejected = Vec::new();

        // (b) displacement from the last accepted position
        if let Some(last) = &self.last {
            for i in 0..N_LANDMARKS {
                if let (Some(p), Some(q)) = (points[i], last[i]) {
                    if (p - q).norm() > cfg.max_displacement {
                        points[i] = None;
                        rejected.push((i, RejectRule::Displacement));
                    }
                }
            }
        }

        if let Some(r) = reference {
            // (a) distance to the reference aligned on the surviving points,
            // refitted once after the worst offenders are gone
            for _ in 0..2 {
                let idx: Vec<usize> = (0..N_LANDMARKS).filter(|&i| points[i].is_some()).collect();
                let src: Vec<Vec3> = idx.iter().map(|&i| r.points[i]).collect();
                let dst: Vec<Vec3> = idx.iter().map(|&i| points[i].expect("filtered")).collect();
                let Some(fit) = kabsch(&src, &dst) else { break };
                for &i in &idx {
                    let p = points[i].expect("filtered");
                    if (fit.transform_point(&r.points[i]) - p).norm() > cfg.reference_threshold {
                        points[i] = None;
                        rejected.push((i, RejectRule::Reference));
                    }
                }
            }

            // (c) eye pairwise-distance pattern against the reference eyes
            let eyes: Vec<usize> = EYES.filter(|&i| points[i].is_some()).collect();
            if eyes.len() >= 2 {
                let (mut dev, mut base) = (0.0, 0.0);
                for (a, &i) in eyes.iter().enumerate() {
                    for &j in &eyes[a + 1..] {
                        let d = (points[i].expect("eye") - points[j].expect("eye")).norm();
                        let rd = r.eye_distance(i, j);
                        dev += (d - rd).abs();
                        base += rd;
                    }
                }
                if base > 0.0 && dev / base > cfg.eye_deviation {
                    for &i in &eyes {
                        points[i] = None;
                        rejected.push((i, RejectRule::EyeModel));
                    }
                }
            }
        }

        let n = points.iter().filter(|p| p.is_some()).count();
        if n < cfg.min_landmarks {
            return Err(PerceptionError::TooFewLandmarks(n));
        }
        let mut last = self.last.unwrap_or([None; N_LANDMARKS]);
        for i in 0..N_LANDMARKS {
            if points[i].is_some() {
                last[i] = points[i];
            }
        }
        self.last = Some(last);
        Ok(AcceptedLandmarks { timestamp: frame.timestamp, points, camera_position: frame.camera.position, rejected, visible })
    }
}

/// Registration plus filtering plus estimation over a frame stream.
#[derive(Debug, Clone, Default)]
pub struct MouthEstimator {
    pub config: MouthConfig,
    pub reference: Option<ReferenceLandmarks>,
    pub filter: LandmarkFilter,
    pending: Vec<LandmarkFrame>,
    last_timestamp: Option<f64>,
}

impl MouthEstimator {
    pub fn new(config: MouthConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn is_registered(&self) -> bool {
        self.reference.is_some()
    }

    /// Drops the reference so the next frames register a new one.
    pub fn reregister(&mut self) {
        self.reference = None;
        self.pending.clear();
        self.filter.reset();
    }

    /// Feeds one frame; returns an estimate when the frame is accepted.
    pub fn process(&mut self, frame: &LandmarkFrame) -> Result<Option<MouthEstimate>, PerceptionError> {
        if self.last_timestamp.is_some_and(|t| frame.timestamp <= t) {
            return Ok(None);
        }
        self.last_timestamp = Some(frame.timestamp);
        if self.reference.is_none() {
            if frame.visible_count() >= self.config.registration_min_visible {
                self.pending.push(frame.clone());
            }
            if self.pending.len() == self.config.registration_frames {
                let frames = std::mem::take(&mut self.pending);
                self.reference = Some(register_reference(&frames, &self.config)?);
            }
        }
        let accepted = match self.filter.filter(frame, self.reference.as_ref(), &self.config) {
            Ok(a) => a,
            Err(PerceptionError::TooFewLandmarks(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        match estimate_mouth_pose(&accepted, self.reference.as_ref(), &self.config) {
            Ok(e) => Ok(Some(e)),
            Err(PerceptionError::TooFewLandmarks(_)) | Err(PerceptionError::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::face::{emit_landmarks, face_template, look_at, FaceScene, Intrinsics, LandmarkNoise};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mouth_pose(yaw_deg: f64, shift: Vec3) -> PoseSE3 {
        let base = UnitQuaternion::from_axes(&Vec3::new(0.0, -1.0, 0.0), &Vec3::z(), &Vec3::new(-1.0, 0.0, 0.0));
        let yaw = UnitQuaternion::from_axis_angle(&Vec3::z(), yaw_deg.to_radians());
        PoseSE3::new(Vec3::new(0.90, 0.22, 0.10) + shift, yaw.compose(&base))
    }

    fn camera() -> PoseSE3 {
        look_at(Vec3::new(0.45, 0.22, 0.18), Vec3::new(0.90, 0.22, 0.10))
    }

    fn frame(m: &PoseSE3, sigma: f64, t: f64, rng: &mut ChaCha8Rng) -> LandmarkFrame {
        let c = camera();
        let k = Intrinsics::default();
        let scene = FaceScene {
            timestamp: t,
            mouth: m,
            mouth_open: false,
            camera: &c,
            intrinsics: &k,
            utensil: None,
            face_blocked: false,
        };
        emit_landmarks(&scene, &LandmarkNoise { sigma, ..Default::default() }, rng)
    }

    fn accept_all(f: &LandmarkFrame) -> AcceptedLandmarks {
        LandmarkFilter::new().filter(f, None, &MouthConfig::default()).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn noiseless_face_gives_exact_pose() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let e = estimate_mouth_pose(&accept_all(&frame(&m, 0.0, 0.0, &mut rng())), None, &MouthConfig::default()).unwrap();
        assert!((e.pose.position - m.position).norm() < 1e-9);
        assert!(e.pose.orientation.angle_to(&m.orientation) < 1e-9);
        assert!(!e.open);
    }

    #[test]
    fn translation_moves_estimate_exactly() {
        let a = mouth_pose(0.0, Vec3::zeros());
        let b = mouth_pose(0.0, Vec3::new(0.0, -0.05, 0.0));
        let ea = estimate_mouth_pose(&accept_all(&frame(&a, 0.0, 0.0, &mut rng())), None, &MouthConfig::default()).unwrap();
        let eb = estimate_mouth_pose(&accept_all(&frame(&b, 0.0, 0.0, &mut rng())), None, &MouthConfig::default()).unwrap();
        assert!((eb.pose.position - ea.pose.position - Vec3::new(0.0, -0.05, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn estimate_is_rigidly_equivariant() {
        let mut r = rng();
        let f = frame(&mouth_pose(10.0, Vec3::zeros()), 0.002, 0.0, &mut r);
        let acc = accept_all(&f);
        let e = estimate_mouth_pose(&acc, None, &MouthConfig::default()).unwrap();
        for _ in 0..20 {
            let t = PoseSE3::new(
                Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)),
                UnitQuaternion::from_euler(r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-3.0..3.0)),
            );
            let mut moved = acc.clone();
            for p in moved.points.iter_mut().flatten() {
                *p = t.transform_point(p);
            }
            moved.camera_position = t.transform_point(&acc.camera_position);
            let em = estimate_mouth_pose(&moved, None, &MouthConfig::default()).unwrap();
            let expect = t.compose(&e.pose);
            assert!((em.pose.position - expect.position).norm() < 1e-6);
            assert!(em.pose.orientation.angle_to(&expect.orientation) < 1e-6);
        }
    }

    #[test]
    fn identical_frames_register_exactly() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let f = frame(&m, 0.0, 0.0, &mut rng());
        let frames = vec![f.clone(); 20];
        let reference = register_reference(&frames, &MouthConfig::default()).unwrap();
        let template = face_template(false);
        for (r, t) in reference.points.iter().zip(template.iter()) {
            assert!((r - t).norm() < 1e-9);
        }
    }

    #[test]
    fn registration_needs_twenty_visible_frames() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let f = frame(&m, 0.0, 0.0, &mut rng());
        assert!(register_reference(&vec![f.clone(); 19], &MouthConfig::default()).is_err());
        let mut bad = f.clone();
        for l in bad.points.iter_mut().take(10) {
            l.visible = false;
        }
        let mut frames = vec![f; 19];
        frames.push(bad);
        assert!(matches!(register_reference(&frames, &MouthConfig::default()), Err(PerceptionError::Registration(_))));
    }

    #[test]
    fn median_ignores_a_single_outlier_frame() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let clean = frame(&m, 0.0, 0.0, &mut rng());
        let pts: Vec<Option<Vec3>> = clean.world_points();
        let mut moved = pts.clone();
        moved[30] = moved[30].map(|p| p + Vec3::new(0.0, 0.0, 0.1));
        let odd = LandmarkFrame::from_world(0.0, clean.camera, clean.intrinsics, &moved);
        let mut frames = vec![clean.clone(); 19];
        frames.push(odd);
        let a = register_reference(&frames, &MouthConfig::default()).unwrap();
        let b = register_reference(&vec![clean; 20], &MouthConfig::default()).unwrap();
        for (p, q) in a.points.iter().zip(b.points.iter()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn noisy_registration_is_accurate() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let template = face_template(false);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut within = 0;
        let mut total = 0;
        for trial in 0..100 {
            // 2 mm RMS isotropic noise
            let sigma = 0.002 / 3f64.sqrt();
            let frames: Vec<LandmarkFrame> = (0..20).map(|k| frame(&m, sigma, (trial * 20 + k) as f64, &mut r)).collect();
            let reference = register_reference(&frames, &MouthConfig::default()).unwrap();
            for (p, t) in reference.points.iter().zip(template.iter()) {
                total += 1;
                if (p - t).amax() <= 0.001 {
                    within += 1;
                }
            }
        }
        assert!(within as f64 / total as f64 >= 0.99, "{within}/{total}");
    }

    fn registered(m: &PoseSE3) -> ReferenceLandmarks {
        let f = frame(m, 0.0, 0.0, &mut rng());
        register_reference(&vec![f; 20], &MouthConfig::default()).unwrap()
    }

    #[test]
    fn clean_frame_is_fully_accepted() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let reference = registered(&m);
        let mut filt = LandmarkFilter::new();
        let cfg = MouthConfig::default();
        let mut r = rng();
        for k in 0..3 {
            let acc = filt.filter(&frame(&m, 0.001, k as f64, &mut r), Some(&reference), &cfg).unwrap();
            assert_eq!(acc.accepted_count(), N_LANDMARKS);
            assert!(acc.rejected.is_empty());
        }
    }

    #[test]
    fn teleported_landmark_is_dropped_by_displacement_rule() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let reference = registered(&m);
        let cfg = MouthConfig::default();
        let mut filt = LandmarkFilter::new();
        let clean = frame(&m, 0.0, 0.0, &mut rng());
        filt.filter(&clean, Some(&reference), &cfg).unwrap();
        let mut pts = clean.world_points();
        pts[50] = pts[50].map(|p| p + Vec3::new(0.0, 0.08, 0.0));
        let jumped = LandmarkFrame::from_world(0.1, clean.camera, clean.intrinsics, &pts);
        let acc = filt.filter(&jumped, Some(&reference), &cfg).unwrap();
        assert_eq!(acc.rejected, vec![(50, RejectRule::Displacement)]);
        assert_eq!(acc.accepted_count(), N_LANDMARKS - 1);
    }

    #[test]
    fn scaled_eyes_drop_the_eye_group() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let reference = registered(&m);
        let cfg = MouthConfig::default();
        let clean = frame(&m, 0.0, 0.0, &mut rng());
        let mut pts = clean.world_points();
        let c = group_centroid(&pts.clone().try_into().unwrap(), EYES).unwrap();
        for i in EYES {
            // scale about the eye centroid; the small spread keeps rule (a) quiet
            pts[i] = pts[i].map(|p| c + (p - c) * 1.5);
        }
        let scaled = LandmarkFrame::from_world(0.0, clean.camera, clean.intrinsics, &pts);
        let acc = LandmarkFilter::new().filter(&scaled, Some(&reference), &cfg).unwrap();
        assert!(EYES.clone().all(|i| acc.points[i].is_none()));
        assert!(acc.rejected.iter().filter(|(_, r)| *r == RejectRule::EyeModel).count() == EYES.len());
    }

    #[test]
    fn eyes_twice_as_far_apart_are_rejected() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let reference = registered(&m);
        let cfg = MouthConfig { reference_threshold: 1.0, ..MouthConfig::default() };
        let clean = frame(&m, 0.0, 0.0, &mut rng());
        let mut pts = clean.world_points();
        let c = group_centroid(&pts.clone().try_into().unwrap(), EYES).unwrap();
        for i in EYES {
            pts[i] = pts[i].map(|p| c + (p - c) * 2.0);
        }
        let scaled = LandmarkFrame::from_world(0.0, clean.camera, clean.intrinsics, &pts);
        let acc = LandmarkFilter::new().filter(&scaled, Some(&reference), &cfg).unwrap();
        assert!(EYES.clone().all(|i| acc.points[i].is_none()));
    }

    #[test]
    fn sparse_frame_is_rejected() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let mut f = frame(&m, 0.0, 0.0, &mut rng());
        for l in f.points.iter_mut().take(40) {
            l.visible = false;
        }
        assert_eq!(
            LandmarkFilter::new().filter(&f, None, &MouthConfig::default()),
            Err(PerceptionError::TooFewLandmarks(28))
        );
    }

    #[test]
    fn monte_carlo_accuracy_under_yaw_and_noise() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let (mut pos, mut ang) = (Vec::new(), Vec::new());
        for k in 0..100 {
            let m = mouth_pose(r.random_range(-20.0..20.0), Vec3::zeros());
            let f = frame(&m, 0.002, k as f64, &mut r);
            let e = estimate_mouth_pose(&accept_all(&f), None, &MouthConfig::default()).unwrap();
            pos.push((e.pose.position - m.position).norm());
            ang.push(e.pose.orientation.angle_to(&m.orientation).to_degrees());
        }
        pos.sort_by(|a, b| a.total_cmp(b));
        ang.sort_by(|a, b| a.total_cmp(b));
        assert!(pos[94] <= 0.005, "p95 position {}", pos[94]);
        assert!(ang[94] <= 2.0, "p95 angle {}", ang[94]);
    }

    #[test]
    fn collinear_groups_are_degenerate() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let f = frame(&m, 0.0, 0.0, &mut rng());
        let mut acc = accept_all(&f);
        for i in 0..N_LANDMARKS {
            if let Some(p) = acc.points[i] {
                // squash everything onto one line through the mouth
                let d = p - m.position;
                acc.points[i] = Some(m.position + Vec3::z() * d.z);
            }
        }
        assert!(matches!(estimate_mouth_pose(&acc, None, &MouthConfig::default()), Err(PerceptionError::Degenerate(_))));
    }

    #[test]
    fn open_mouth_is_flagged() {
        let m = mouth_pose(0.0, Vec3::zeros());
        let c = camera();
        let k = Intrinsics::default();
        let scene = FaceScene { timestamp: 0.0, mouth: &m, mouth_open: true, camera: &c, intrinsics: &k, utensil: None, face_blocked: false };
        let f = emit_landmarks(&scene, &LandmarkNoise { sigma: 0.0, ..Default::default() }, &mut rng());
        let e = estimate_mouth_pose(&accept_all(&f), None, &MouthConfig::default()).unwrap();
        assert!(e.open);
        assert!((e.confidence - 1.0).abs() < 1e-12);
    }
}
