//! Synthetic scenes with exact ground truth.
//!
//! A scene is a textured, panning background with four subjects painted in
//! order: a large object (rectangle, static or panning), a walking stick-figure
//! human, a garment over the human's torso, and a small object held in the
//! right hand. Each subject's mask is its full rasterized silhouette, and the
//! human's joints are emitted as a pose sequence.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_stats, Category, SubjectRecord};
use crate::pose::{Keypoint, PoseFrame, PoseSequence};
use crate::raster::Shape;
use crate::video::{MaskSequence, VideoClip};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub roster: Vec<Category>,
    /// Probability that the large object stays still.
    pub p_static_large: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frames: 17,
            height: 64,
            width: 64,
            roster: Category::ALL.to_vec(),
            p_static_large: 0.2,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Config("scene roster is empty".into()));
        }
        if self.frames % 4 != 1 {
            return Err(Error::InvalidClipLength(self.frames));
        }
        if self.height < 16 || self.width < 16 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Shape(format!(
                "scene size {}x{} must be multiples of 8 and at least 16",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub clip_id: String,
    pub clip: VideoClip,
    pub pose: PoseSequence,
    pub records: Vec<SubjectRecord>,
}

pub fn clip_id(seed: u64) -> String {
    format!("scene_{seed:08}")
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
    ]
}

/// Joint positions of the walking figure at frame `t`.
fn figure_joints(t: usize, cx: f64, h: f64, phase: f64) -> Vec<(&'static str, f64, f64)> {
    let swing = (phase + t as f64 * 0.6).sin();
    let pelvis = (cx, 0.6 * h);
    let neck = (cx, pelvis.1 - 0.22 * h);
    let head = (cx, neck.1 - 0.09 * h);
    let limb = |origin: (f64, f64), angle: f64, len: f64| (origin.0 + len * angle.sin(), origin.1 + len * angle.cos());
    let arm = 0.5 * swing;
    let leg = 0.45 * swing;
    let l_shoulder = (cx - 0.08 * h, neck.1 + 0.02 * h);
    let r_shoulder = (cx + 0.08 * h, neck.1 + 0.02 * h);
    let l_elbow = limb(l_shoulder, arm, 0.12 * h);
    let r_elbow = limb(r_shoulder, -arm, 0.12 * h);
    let l_wrist = limb(l_elbow, arm + 0.3, 0.11 * h);
    let r_wrist = limb(r_elbow, -arm + 0.3, 0.11 * h);
    let l_hand = limb(l_wrist, arm + 0.3, 0.04 * h);
    let r_hand = limb(r_wrist, -arm + 0.3, 0.04 * h);
    let l_hip = (cx - 0.05 * h, pelvis.1);
    let r_hip = (cx + 0.05 * h, pelvis.1);
    let l_knee = limb(l_hip, leg, 0.13 * h);
    let r_knee = limb(r_hip, -leg, 0.13 * h);
    let l_ankle = limb(l_knee, leg * 0.5, 0.13 * h);
    let r_ankle = limb(r_knee, -leg * 0.5, 0.13 * h);
    vec![
        ("head", head.0, head.1),
        ("neck", neck.0, neck.1),
        ("l_shoulder", l_shoulder.0, l_shoulder.1),
        ("r_shoulder", r_shoulder.0, r_shoulder.1),
        ("l_elbow", l_elbow.0, l_elbow.1),
        ("r_elbow", r_elbow.0, r_elbow.1),
        ("l_wrist", l_wrist.0, l_wrist.1),
        ("r_wrist", r_wrist.0, r_wrist.1),
        ("l_hand", l_hand.0, l_hand.1),
        ("r_hand", r_hand.0, r_hand.1),
        ("pelvis", pelvis.0, pelvis.1),
        ("l_hip", l_hip.0, l_hip.1),
        ("r_hip", r_hip.0, r_hip.1),
        ("l_knee", l_knee.0, l_knee.1),
        ("r_knee", r_knee.0, r_knee.1),
        ("l_ankle", l_ankle.0, l_ankle.1),
        ("r_ankle", r_ankle.0, r_ankle.1),
    ]
}

fn joint(j: &[(&str, f64, f64)], name: &str) -> (f64, f64) {
    let (_, x, y) = j.iter().find(|(n, _, _)| *n == name).expect("known joint");
    (*x, *y)
}

/// Silhouette shapes of the figure: limbs, torso and head.
fn figure_shapes(j: &[(&str, f64, f64)], h: f64) -> Vec<Shape> {
    let cap = |a: &str, b: &str, r: f64| {
        let (ax, ay) = joint(j, a);
        let (bx, by) = joint(j, b);
        Shape::Capsule { ax, ay, bx, by, r }
    };
    let limb = 0.035 * h;
    let (hx, hy) = joint(j, "head");
    vec![
        cap("neck", "pelvis", 0.07 * h),
        cap("l_shoulder", "r_shoulder", limb),
        cap("l_shoulder", "l_elbow", limb),
        cap("l_elbow", "l_hand", limb),
        cap("r_shoulder", "r_elbow", limb),
        cap("r_elbow", "r_hand", limb),
        cap("l_hip", "r_hip", limb),
        cap("l_hip", "l_knee", limb),
        cap("l_knee", "l_ankle", limb),
        cap("r_hip", "r_knee", limb),
        cap("r_knee", "r_ankle", limb),
        Shape::Disc {
            cx: hx,
            cy: hy,
            r: 0.07 * h,
        },
    ]
}

fn garment_shape(j: &[(&str, f64, f64)], h: f64) -> Shape {
    let pad = 0.04 * h;
    let (lsx, lsy) = joint(j, "l_shoulder");
    let (rsx, rsy) = joint(j, "r_shoulder");
    let (lhx, lhy) = joint(j, "l_hip");
    let (rhx, rhy) = joint(j, "r_hip");
    Shape::Polygon(vec![
        (lsx - pad, lsy - pad * 0.5),
        (rsx + pad, rsy - pad * 0.5),
        (rhx + pad, rhy + pad),
        (lhx - pad, lhy + pad),
    ])
}

/// Position on a back-and-forth path between `lo` and `hi`.
fn ping_pong(start: f64, velocity: f64, t: usize, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let p = (start - lo + velocity * t as f64).rem_euclid(2.0 * span);
    lo + if p <= span { p } else { 2.0 * span - p }
}

/// Per-scene motion parameters; every silhouette is a pure function of these and the frame index.
#[derive(Debug, Clone)]
struct Geometry {
    h: f64,
    w: f64,
    large_size: (f64, f64),
    large_start: (f64, f64),
    large_speed: f64,
    walk_start: f64,
    walk_speed: f64,
    phase: f64,
}

impl Geometry {
    /// Joints at frame `t`, rounded to the pose sidecar's precision.
    fn joints(&self, t: usize) -> Vec<(&'static str, f64, f64)> {
        let cx = ping_pong(self.walk_start, self.walk_speed, t, 0.2 * self.w, 0.8 * self.w);
        figure_joints(t, cx, self.h, self.phase)
            .into_iter()
            .map(|(n, x, y)| (n, x as f32 as f64, y as f32 as f64))
            .collect()
    }

    fn silhouette(&self, category: Category, t: usize) -> Vec<Shape> {
        match category {
            Category::LargeObject => {
                let x0 = ping_pong(self.large_start.0, self.large_speed, t, 0.0, self.w - self.large_size.0);
                vec![Shape::Rect {
                    x0,
                    y0: self.large_start.1,
                    x1: x0 + self.large_size.0,
                    y1: self.large_start.1 + self.large_size.1,
                }]
            }
            Category::Human => figure_shapes(&self.joints(t), self.h),
            Category::Garment => vec![garment_shape(&self.joints(t), self.h)],
            Category::SmallObject => {
                let (cx, cy) = joint(&self.joints(t), "r_hand");
                vec![Shape::Disc {
                    cx,
                    cy,
                    r: held_radius(self.h as usize),
                }]
            }
        }
    }

    fn render_alone(&self, category: Category, frames: usize) -> Array3<u8> {
        let mut m = Array3::zeros((frames, self.h as usize, self.w as usize));
        for t in 0..frames {
            for s in self.silhouette(category, t) {
                s.fill(&mut m.slice_mut(ndarray::s![t, .., ..]));
            }
        }
        m
    }
}

fn held_radius(height: usize) -> f64 {
    0.08 * height as f64
}

/// Back-to-front paint order.
const PAINT_ORDER: [Category; 4] = [
    Category::LargeObject,
    Category::Human,
    Category::Garment,
    Category::SmallObject,
];

/// Renders one scene; the output depends only on `seed` and `spec`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    let (scene, _) = generate_with_geometry(seed, spec)?;
    Ok(scene)
}

fn generate_with_geometry(seed: u64, spec: &SceneSpec) -> Result<(Scene, Geometry)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, h, w) = (spec.frames, spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);

    // Background: oriented sinusoids per channel, panning with a fixed velocity.
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let k = rng.random_range(0.05..0.35);
            [
                k * a.cos(),
                k * a.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.04..0.1),
            ]
        })
        .collect();
    let base = color(&mut rng);
    let pan = (rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));

    let large_size = (rng.random_range(0.3..0.5) * wf, rng.random_range(0.3..0.5) * hf);
    let large_static = rng.random::<f64>() < spec.p_static_large;
    let large_speed = if large_static {
        0.0
    } else {
        rng.random_range(2.0..4.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }
    };
    let large_start = (
        rng.random_range(0.0..wf - large_size.0),
        rng.random_range(0.0..hf - large_size.1),
    );
    let geo = Geometry {
        h: hf,
        w: wf,
        large_size,
        large_start,
        large_speed,
        walk_start: rng.random_range(0.3 * wf..0.7 * wf),
        walk_speed: rng.random_range(1.6..3.2) * if rng.random::<bool>() { 1.0 } else { -1.0 },
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    };
    let colors: Vec<[f32; 3]> = PAINT_ORDER.iter().map(|_| color(&mut rng)).collect();

    let mut data = Array4::<f32>::zeros((t_len, 3, h, w));
    let mut pose_frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut frame = data.slice_mut(ndarray::s![t, .., .., ..]);
        let (ox, oy) = (pan.0 * t as f64, pan.1 * t as f64);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + ox, y as f64 + oy);
                for (ch, &b) in base.iter().enumerate() {
                    let mut v = 0.3 + 0.4 * b as f64;
                    for wv in waves.iter().skip(ch).step_by(3) {
                        v += wv[3] * (wv[0] * px + wv[1] * py + wv[2]).sin();
                    }
                    frame[[ch, y, x]] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        for (category, c) in PAINT_ORDER.iter().zip(&colors) {
            for s in geo.silhouette(*category, t) {
                s.for_each_pixel(h, w, |y, x| {
                    for (ch, &v) in c.iter().enumerate() {
                        frame[[ch, y, x]] = v;
                    }
                });
            }
        }
        pose_frames.push(PoseFrame {
            keypoints: geo
                .joints(t)
                .iter()
                .map(|&(name, x, y)| Keypoint {
                    name: name.to_string(),
                    x: x as f32,
                    y: y as f32,
                    visible: x >= 0.0 && y >= 0.0 && x < wf && y < hf,
                })
                .collect(),
        });
    }

    let clip = VideoClip::new(data)?;
    let pose = PoseSequence::new(w, h, pose_frames)?;
    let id = clip_id(seed);
    let mut records: Vec<SubjectRecord> = Vec::new();
    for &category in &spec.roster {
        if records.iter().any(|r| r.category == category) {
            continue;
        }
        let mask = MaskSequence::new(geo.render_alone(category, t_len))?;
        let stats = compute_stats(&mask);
        records.push(SubjectRecord {
            clip_id: id.clone(),
            category,
            pose: category.carries_pose().then(|| pose.clone()),
            mask,
            stats,
        });
    }
    Ok((
        Scene {
            clip_id: id,
            clip,
            pose,
            records,
        },
        geo,
    ))
}

/// Silhouette of the held object at each frame, recomputed from the pose.
pub fn held_object_mask(pose: &PoseSequence) -> MaskSequence {
    let mut m = Array3::zeros((pose.len(), pose.height, pose.width));
    for (t, f) in pose.frames.iter().enumerate() {
        let k = f.get("r_hand").expect("figure has a right hand");
        Shape::Disc {
            cx: k.x as f64,
            cy: k.y as f64,
            r: held_radius(pose.height),
        }
        .fill(&mut m.slice_mut(ndarray::s![t, .., ..]));
    }
    MaskSequence::new(m).expect("binary")
}
