//! Pinhole camera, detection-box encoding and absolute-translation decoding.
//!
//! The camera looks along +z with x right and y down; only points strictly
//! in front of the camera project. A person's detection box is summarized as
//! `(c_x, c_y, d) / f` with the center taken relative to the principal point
//! and `d` the larger box side. The regressed camera triple
//! `(f_c, t_x, t_y)` decodes to a full translation via
//! `t = (t_x + 2 c_x / (d f_c), t_y + 2 c_y / (d f_c), 2 f / (d f_c))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, V};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels (square pixels, no skew).
    pub focal: f64,
    /// Principal point, pixels.
    pub cx: f64,
    pub cy: f64,
    /// Image size in pixels.
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, width: f64, height: f64) -> Self {
        CameraIntrinsics {
            focal,
            cx: width / 2.0,
            cy: height / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Config(format!(
                "camera needs positive focal length and image size, got f={} {}x{}",
                self.focal, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A detection box prepared for the network: raw pixel geometry plus the
/// focal-normalized encoding fed to features and translation decoding.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoxInfo {
    /// Box center relative to the principal point, pixels.
    pub center: [f64; 2],
    /// Larger side of the box, pixels.
    pub size: f64,
    /// `(c_x, c_y, d) / f`.
    pub encoded: [f64; 3],
}

/// Summarize an axis-aligned box `[x_min, y_min, x_max, y_max]` (pixels).
pub fn encode_box(bbox: [f64; 4], cam: &CameraIntrinsics) -> Result<BoxInfo> {
    let (w, h) = (bbox[2] - bbox[0], bbox[3] - bbox[1]);
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Degenerate(format!(
            "box {bbox:?} has nonpositive extent {w}x{h}"
        )));
    }
    if bbox[2] < 0.0 || bbox[0] > cam.width || bbox[3] < 0.0 || bbox[1] > cam.height {
        return Err(Error::Degenerate(format!(
            "box {bbox:?} lies entirely outside the {}x{} image",
            cam.width, cam.height
        )));
    }
    let center = [
        (bbox[0] + bbox[2]) / 2.0 - cam.cx,
        (bbox[1] + bbox[3]) / 2.0 - cam.cy,
    ];
    let size = w.max(h);
    Ok(BoxInfo {
        center,
        size,
        encoded: [center[0] / cam.focal, center[1] / cam.focal, size / cam.focal],
    })
}

/// Project a camera-frame point to pixels. Depth must be positive.
pub fn project_point(p: &[f64; 3], cam: &CameraIntrinsics) -> Result<[f64; 2]> {
    if p[2] <= 0.0 {
        return Err(Error::Degenerate(format!(
            "cannot project point with depth {}",
            p[2]
        )));
    }
    Ok([
        cam.focal * p[0] / p[2] + cam.cx,
        cam.focal * p[1] / p[2] + cam.cy,
    ])
}

/// Tape projection of a length-3 point node to a length-2 pixel node.
pub fn project_point_var(tape: &mut Tape, p: V, cam: &CameraIntrinsics) -> Result<V> {
    assert!(tape.value(p).len() == 3, "projection expects a 3-vector");
    let z = tape.slice(p, 2, 1);
    if tape.item(z) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "cannot project point with depth {}",
            tape.item(z)
        )));
    }
    let xy = tape.slice(p, 0, 2);
    let inv_z = tape.recip(z);
    let scaled = tape.scalar_mul(inv_z, xy);
    let focal = tape.mul_const(scaled, cam.focal);
    let principal = tape.constant_vector(vec![cam.cx, cam.cy]);
    Ok(tape.add(focal, principal))
}

/// Decode the regressed camera triple into a camera-frame translation.
pub fn decode_translation(
    f_c: f64,
    t_x: f64,
    t_y: f64,
    box_info: &BoxInfo,
    cam: &CameraIntrinsics,
) -> Result<[f64; 3]> {
    if f_c <= 0.0 {
        return Err(Error::Degenerate(format!("camera scale f_c = {f_c} must be positive")));
    }
    let d = box_info.size;
    Ok([
        t_x + 2.0 * box_info.center[0] / (d * f_c),
        t_y + 2.0 * box_info.center[1] / (d * f_c),
        2.0 * cam.focal / (d * f_c),
    ])
}

/// Tape version of [`decode_translation`]. `f_c`, `t_x`, `t_y` are scalar
/// nodes; the result is a length-3 node.
pub fn decode_translation_var(
    tape: &mut Tape,
    f_c: V,
    t_x: V,
    t_y: V,
    box_info: &BoxInfo,
    cam: &CameraIntrinsics,
) -> Result<V> {
    if tape.item(f_c) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "camera scale f_c = {} must be positive",
            tape.item(f_c)
        )));
    }
    let d = box_info.size;
    let inv_fc = tape.recip(f_c);
    let x_off = tape.mul_const(inv_fc, 2.0 * box_info.center[0] / d);
    let y_off = tape.mul_const(inv_fc, 2.0 * box_info.center[1] / d);
    let tx = tape.add(t_x, x_off);
    let ty = tape.add(t_y, y_off);
    let tz = tape.mul_const(inv_fc, 2.0 * cam.focal / d);
    Ok(tape.concat(&[tx, ty, tz]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1920.0, 1080.0)
    }

    #[test]
    fn box_encoding_normalizes_by_focal_length() {
        // Center (1060, 490) is (+100, -50) from the principal point; the
        // larger side is 200.
        let b = encode_box([960.0, 440.0, 1160.0, 540.0], &cam()).unwrap();
        assert_eq!(b.center, [100.0, -50.0]);
        assert_eq!(b.size, 200.0);
        assert_eq!(b.encoded, [0.1, -0.05, 0.2]);
    }

    #[test]
    fn empty_and_outside_boxes_are_rejected() {
        assert!(encode_box([100.0, 100.0, 100.0, 200.0], &cam()).is_err());
        assert!(encode_box([200.0, 200.0, 100.0, 300.0], &cam()).is_err());
        assert!(encode_box([-500.0, 100.0, -100.0, 300.0], &cam()).is_err());
    }

    #[test]
    fn projection_matches_manual_arithmetic() {
        let p = project_point(&[1.0, 0.0, 5.0], &cam()).unwrap();
        assert_eq!(p, [1160.0, 540.0]);
        assert!(project_point(&[0.0, 0.0, 0.0], &cam()).is_err());
        assert!(project_point(&[0.0, 0.0, -2.0], &cam()).is_err());
    }

    #[test]
    fn centered_box_with_unit_scale_decodes_to_known_depth() {
        // Box centered on the principal point, d = 200, f = 1000, f_c = 2:
        // t = (0, 0, 2*1000 / (200*2)) = (0, 0, 5).
        let b = encode_box([860.0, 440.0, 1060.0, 640.0], &cam()).unwrap();
        let t = decode_translation(2.0, 0.0, 0.0, &b, &cam()).unwrap();
        assert_eq!(t, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn offset_box_shifts_lateral_translation() {
        // c_x = 100, d = 200, f_c = 1: t_x contribution 2*100/200 = 1.
        let b = encode_box([960.0, 440.0, 1160.0, 540.0], &cam()).unwrap();
        let t = decode_translation(1.0, 0.3, 0.0, &b, &cam()).unwrap();
        assert!((t[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn decoded_translation_projects_to_box_center() {
        // The decoded point (with t_x = t_y = 0) projects exactly onto the
        // box center for any box and any positive f_c.
        let c = cam();
        for (bbox, f_c) in [
            ([100.0, 50.0, 420.0, 700.0], 0.7),
            ([1500.0, 800.0, 1900.0, 1060.0], 1.0),
            ([900.0, 500.0, 1000.0, 580.0], 3.2),
        ] {
            let b = encode_box(bbox, &c).unwrap();
            let t = decode_translation(f_c, 0.0, 0.0, &b, &c).unwrap();
            let px = project_point(&t, &c).unwrap();
            assert!((px[0] - (b.center[0] + c.cx)).abs() < 1e-9);
            assert!((px[1] - (b.center[1] + c.cy)).abs() < 1e-9);
        }
    }

    #[test]
    fn nonpositive_camera_scale_is_rejected() {
        let b = encode_box([860.0, 440.0, 1060.0, 640.0], &cam()).unwrap();
        assert!(decode_translation(0.0, 0.0, 0.0, &b, &cam()).is_err());
        assert!(decode_translation(-1.0, 0.0, 0.0, &b, &cam()).is_err());
    }

    #[test]
    fn tape_versions_match_plain_versions() {
        let c = cam();
        let b = encode_box([400.0, 300.0, 700.0, 900.0], &c).unwrap();
        let plain_t = decode_translation(1.4, 0.2, -0.1, &b, &c).unwrap();

        let mut tape = Tape::new();
        let f_c = tape.leaf(Tensor::scalar(1.4));
        let t_x = tape.leaf(Tensor::scalar(0.2));
        let t_y = tape.leaf(Tensor::scalar(-0.1));
        let t = decode_translation_var(&mut tape, f_c, t_x, t_y, &b, &c).unwrap();
        for (a, e) in tape.value(t).data().iter().zip(plain_t.iter()) {
            assert!((a - e).abs() < 1e-15);
        }

        let plain_px = project_point(&plain_t, &c).unwrap();
        let px = project_point_var(&mut tape, t, &c).unwrap();
        for (a, e) in tape.value(px).data().iter().zip(plain_px.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
