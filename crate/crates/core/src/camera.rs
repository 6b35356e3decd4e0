//! Camera metadata: sensor levels, color calibration, shutter, pose and intrinsics.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseParams;

/// 2x2 color filter layout, named by the top-left quad read row by row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BayerPattern {
    #[default]
    RGGB,
    BGGR,
    GRBG,
    GBRG,
}

impl BayerPattern {
    /// Channel index (0 = R, 1 = G, 2 = B) measured at pixel `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let quad = match self {
            BayerPattern::RGGB => [0, 1, 1, 2],
            BayerPattern::BGGR => [2, 1, 1, 0],
            BayerPattern::GRBG => [1, 0, 2, 1],
            BayerPattern::GBRG => [1, 2, 0, 1],
        };
        quad[(y & 1) * 2 + (x & 1)]
    }

    /// Position of the quad site `site` (0..4, row-major in the quad).
    pub fn site_offset(site: usize) -> (usize, usize) {
        (site & 1, site >> 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl Intrinsics {
    pub fn pinhole(width: usize, height: usize, focal: f64) -> Self {
        Intrinsics {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            k1: 0.0,
            k2: 0.0,
        }
    }
}

/// Rigid world-to-camera transform: `x_cam = rotation * x_world + translation`.
///
/// Camera looks down +z, with +x right and +y down in the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }
}

impl Pose {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * Vector3::from(self.translation))
    }

    pub fn camera_to_world_dir(&self, d: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * d
    }

    /// Camera at `eye` looking at `target`; `up` is the world up hint.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
        let forward = (target - eye).normalize();
        // image y points down, so camera +y is world "down"
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rows = [right, down, forward];
        let rotation = [
            [rows[0].x, rows[0].y, rows[0].z],
            [rows[1].x, rows[1].y, rows[1].z],
            [rows[2].x, rows[2].y, rows[2].z],
        ];
        let r = Matrix3::new(
            right.x, right.y, right.z, down.x, down.y, down.z, forward.x, forward.y, forward.z,
        );
        let t = -(r * eye);
        Pose {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn forward(&self) -> Vector3<f64> {
        let r = &self.rotation;
        Vector3::new(r[2][0], r[2][1], r[2][2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraMetadata {
    pub white_level: u32,
    pub black_level: u32,
    /// As-shot neutral gains; white balance divides by these.
    pub wb_gains: [f64; 3],
    /// XYZ to camera RGB, rows first.
    pub ccm: [[f64; 3]; 3],
    /// Shutter time in seconds.
    pub shutter: f64,
    #[serde(default = "default_iso")]
    pub iso: f64,
    #[serde(default)]
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

fn default_iso() -> f64 {
    100.0
}

impl CameraMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.white_level <= self.black_level {
            return Err(Error::InvalidMetadata(format!(
                "white level {} must exceed black level {}",
                self.white_level, self.black_level
            )));
        }
        if self.wb_gains.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidMetadata(format!(
                "white balance gains must be positive, got {:?}",
                self.wb_gains
            )));
        }
        if !(self.shutter > 0.0) {
            return Err(Error::InvalidMetadata(format!(
                "shutter must be positive, got {}",
                self.shutter
            )));
        }
        if self.ccm_matrix().determinant().abs() < 1e-12 {
            return Err(Error::InvalidMetadata("color matrix is singular".into()));
        }
        if !(self.intrinsics.focal > 0.0) {
            return Err(Error::InvalidMetadata("focal length must be positive".into()));
        }
        Ok(())
    }

    pub fn ccm_matrix(&self) -> Matrix3<f64> {
        mat3(&self.ccm)
    }
}

pub(crate) fn mat3(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

/// JSON sidecar stored next to every image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataSidecar {
    #[serde(flatten)]
    pub meta: CameraMetadata,
    #[serde(default)]
    pub bayer_pattern: BayerPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
}

impl MetadataSidecar {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: MetadataSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        sidecar.meta.validate()?;
        Ok(sidecar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> CameraMetadata {
        CameraMetadata {
            white_level: 4095,
            black_level: 528,
            wb_gains: [0.5, 1.0, 0.6],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            shutter: 1.0 / 30.0,
            iso: 100.0,
            pose: Pose::default(),
            intrinsics: Intrinsics::pinhole(8, 8, 10.0),
        }
    }

    #[test]
    fn bayer_quads_have_two_greens() {
        for p in [
            BayerPattern::RGGB,
            BayerPattern::BGGR,
            BayerPattern::GRBG,
            BayerPattern::GBRG,
        ] {
            let mut counts = [0; 3];
            for y in 0..2 {
                for x in 0..2 {
                    counts[p.channel_at(x, y)] += 1;
                }
            }
            assert_eq!(counts, [1, 2, 1], "{p:?}");
        }
        assert_eq!(BayerPattern::RGGB.channel_at(0, 0), 0);
        assert_eq!(BayerPattern::RGGB.channel_at(1, 1), 2);
        assert_eq!(BayerPattern::RGGB.channel_at(3, 2), 1);
    }

    #[test]
    fn metadata_validation() {
        assert!(meta().validate().is_ok());
        let mut m = meta();
        m.white_level = 528;
        assert!(matches!(m.validate(), Err(Error::InvalidMetadata(_))));
        let mut m = meta();
        m.wb_gains[1] = 0.0;
        assert!(m.validate().is_err());
        let mut m = meta();
        m.shutter = 0.0;
        assert!(m.validate().is_err());
        let mut m = meta();
        m.ccm = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(m.validate().is_err());
    }

    #[test]
    fn look_at_points_forward_at_target() {
        let eye = Vector3::new(0.0, -1.0, -3.0);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0));
        assert!((pose.center() - eye).norm() < 1e-12);
        let f = pose.camera_to_world_dir(Vector3::new(0.0, 0.0, 1.0));
        assert!((f - (-eye).normalize()).norm() < 1e-12);
        let r = pose.rotation_matrix();
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let s = MetadataSidecar {
            meta: meta(),
            bayer_pattern: BayerPattern::GRBG,
            noise: Some(NoiseParams {
                shot: 0.01,
                read: 0.001,
            }),
        };
        s.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"shot\""));
        assert!(text.contains("\"white_level\""));
        assert_eq!(MetadataSidecar::read(&path).unwrap(), s);
    }
}
