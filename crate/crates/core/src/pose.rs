//! Body and hand keypoint sequences, their JSON sidecar, and skeleton rendering.

use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::raster::Shape;
use crate::video::VideoClip;
use crate::{Error, Result};

/// Bones drawn by [`PoseSequence::render`], with an RGB color each.
pub const SKELETON: &[(&str, &str, [f32; 3])] = &[
    ("head", "neck", [1.0, 1.0, 1.0]),
    ("neck", "l_shoulder", [1.0, 0.3, 0.3]),
    ("neck", "r_shoulder", [0.3, 1.0, 0.3]),
    ("l_shoulder", "l_elbow", [1.0, 0.5, 0.0]),
    ("l_elbow", "l_wrist", [1.0, 0.8, 0.0]),
    ("r_shoulder", "r_elbow", [0.0, 1.0, 0.5]),
    ("r_elbow", "r_wrist", [0.0, 1.0, 0.9]),
    ("neck", "pelvis", [0.6, 0.6, 1.0]),
    ("pelvis", "l_hip", [0.8, 0.2, 0.8]),
    ("pelvis", "r_hip", [0.2, 0.2, 0.8]),
    ("l_hip", "l_knee", [0.9, 0.0, 0.6]),
    ("l_knee", "l_ankle", [0.7, 0.0, 0.3]),
    ("r_hip", "r_knee", [0.0, 0.6, 0.9]),
    ("r_knee", "r_ankle", [0.0, 0.3, 0.7]),
    ("l_wrist", "l_hand", [1.0, 1.0, 0.4]),
    ("r_wrist", "r_hand", [0.4, 1.0, 1.0]),
];

/// Hand keypoints are drawn as small dots on top of the skeleton.
pub const HAND_KEYPOINTS: &[&str] = &["l_hand", "r_hand"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f32,
    pub y: f32,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseFrame {
    pub keypoints: Vec<Keypoint>,
}

impl PoseFrame {
    pub fn get(&self, name: &str) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<PoseFrame>,
}

impl PoseSequence {
    /// Validates bounds; keypoints outside the frame must be flagged invisible.
    pub fn new(width: usize, height: usize, frames: Vec<PoseFrame>) -> Result<Self> {
        for (t, f) in frames.iter().enumerate() {
            for k in &f.keypoints {
                let inside = k.x >= 0.0 && k.y >= 0.0 && k.x < width as f32 && k.y < height as f32;
                if k.visible && !inside {
                    return Err(Error::InvalidValue(format!(
                        "visible keypoint {} at ({}, {}) outside {width}x{height} in frame {t}",
                        k.name, k.x, k.y
                    )));
                }
            }
        }
        Ok(Self { width, height, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            frames: self.frames[start..end].to_vec(),
        }
    }

    /// Skeleton image per frame: colored bones of width ~2% of the frame height
    /// on black, plus white hand dots. Only visible endpoints are drawn.
    pub fn render(&self) -> Result<VideoClip> {
        let (h, w) = (self.height, self.width);
        let mut data = Array4::<f32>::zeros((self.frames.len().max(1), 3, h, w));
        let r = (h as f64 * 0.02).max(0.75);
        for (t, frame) in self.frames.iter().enumerate() {
            for (a, b, color) in SKELETON {
                let (Some(ka), Some(kb)) = (frame.get(a), frame.get(b)) else {
                    continue;
                };
                if !(ka.visible && kb.visible) {
                    continue;
                }
                let bone = Shape::Capsule {
                    ax: ka.x as f64,
                    ay: ka.y as f64,
                    bx: kb.x as f64,
                    by: kb.y as f64,
                    r,
                };
                bone.for_each_pixel(h, w, |y, x| {
                    for c in 0..3 {
                        data[[t, c, y, x]] = color[c];
                    }
                });
            }
            for name in HAND_KEYPOINTS {
                if let Some(k) = frame.get(name).filter(|k| k.visible) {
                    Shape::Disc {
                        cx: k.x as f64,
                        cy: k.y as f64,
                        r: r * 1.5,
                    }
                    .for_each_pixel(h, w, |y, x| {
                        for c in 0..3 {
                            data[[t, c, y, x]] = 1.0;
                        }
                    });
                }
            }
        }
        VideoClip::new(data)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(self)?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: PoseSequence = serde_json::from_str(&s)?;
        Self::new(p.width, p.height, p.frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(name: &str, x: f32, y: f32) -> Keypoint {
        Keypoint {
            name: name.into(),
            x,
            y,
            visible: true,
        }
    }

    #[test]
    fn visible_out_of_bounds_is_rejected() {
        let f = PoseFrame {
            keypoints: vec![kp("head", 70.0, 3.0)],
        };
        assert!(PoseSequence::new(64, 64, vec![f]).is_err());
        let f = PoseFrame {
            keypoints: vec![Keypoint {
                visible: false,
                ..kp("head", 70.0, 3.0)
            }],
        };
        assert!(PoseSequence::new(64, 64, vec![f]).is_ok());
    }

    #[test]
    fn render_draws_bone_pixels_only_between_visible_joints() {
        let f = PoseFrame {
            keypoints: vec![kp("head", 32.0, 10.0), kp("neck", 32.0, 20.0)],
        };
        let p = PoseSequence::new(64, 64, vec![f.clone(), PoseFrame::default()]).unwrap();
        let clip = p.render().unwrap();
        assert_eq!((clip.frames(), clip.height(), clip.width()), (2, 64, 64));
        assert_eq!(clip.data()[[0, 0, 15, 32]], 1.0);
        assert_eq!(clip.data()[[0, 0, 15, 40]], 0.0);
        assert!(clip.data().slice(ndarray::s![1, .., .., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_roundtrip() {
        let f = PoseFrame {
            keypoints: vec![kp("head", 1.5, 2.25)],
        };
        let p = PoseSequence::new(16, 16, vec![f]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.json");
        p.save_json(&path).unwrap();
        assert_eq!(PoseSequence::load_json(&path).unwrap(), p);
    }
}
