//! Synthetic capture artifacts: crop, linear motion blur, off-focus blur
//! and exposure change, applied in that order.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Underexposed,
    Normal,
    Overexposed,
    HighMotionBlur,
    ModerateMotionBlur,
    LowMotionBlur,
    PartialSubject,
    PartialSubjectOffFocus,
    Interference,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Underexposed,
        Scenario::Normal,
        Scenario::Overexposed,
        Scenario::HighMotionBlur,
        Scenario::ModerateMotionBlur,
        Scenario::LowMotionBlur,
        Scenario::PartialSubject,
        Scenario::PartialSubjectOffFocus,
        Scenario::Interference,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Underexposed => "underexposed",
            Scenario::Normal => "normal",
            Scenario::Overexposed => "overexposed",
            Scenario::HighMotionBlur => "high_motion_blur",
            Scenario::ModerateMotionBlur => "moderate_motion_blur",
            Scenario::LowMotionBlur => "low_motion_blur",
            Scenario::PartialSubject => "partial_subject",
            Scenario::PartialSubjectOffFocus => "partial_subject_off_focus",
            Scenario::Interference => "interference",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.label() == s.trim())
            .ok_or_else(|| EvalError::InvalidSpec(format!("unknown scenario {s:?}")))
    }
}

/// Crop window as fractions of the source width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl CropRect {
    pub const FULL: CropRect = CropRect { x: 0.0, y: 0.0, width: 1.0, height: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub scenario: Scenario,
    /// Per-channel brightness multiplier, 0..=4.
    pub gain: f64,
    /// Motion blur kernel length in pixels; 1 disables it.
    pub blur_length: u32,
    pub blur_angle_deg: f64,
    pub crop: CropRect,
    /// Gaussian (off-focus) sigma in pixels; 0 disables it.
    pub sigma: f64,
}

impl DegradationSpec {
    pub fn identity(scenario: Scenario) -> Self {
        Self { scenario, gain: 1.0, blur_length: 1, blur_angle_deg: 0.0, crop: CropRect::FULL, sigma: 0.0 }
    }

    /// Default parameters per scenario. `Interference` cannot be synthesized
    /// from a single subject photo; it is the identity and expects a
    /// scenario-specific source image from the manifest.
    pub fn preset(scenario: Scenario) -> Self {
        let base = Self::identity(scenario);
        let partial = CropRect { x: 0.0, y: 0.0, width: 0.6, height: 1.0 };
        match scenario {
            Scenario::Normal | Scenario::Interference => base,
            Scenario::Underexposed => Self { gain: 0.2, ..base },
            Scenario::Overexposed => Self { gain: 2.5, ..base },
            Scenario::HighMotionBlur => Self { blur_length: 31, ..base },
            Scenario::ModerateMotionBlur => Self { blur_length: 15, ..base },
            Scenario::LowMotionBlur => Self { blur_length: 5, ..base },
            Scenario::PartialSubject => Self { crop: partial, ..base },
            Scenario::PartialSubjectOffFocus => Self { crop: partial, sigma: 4.0, ..base },
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSpec(m.to_string()));
        if !(0.0..=4.0).contains(&self.gain) {
            return bad("gain must be in [0, 4]");
        }
        if self.blur_length < 1 {
            return bad("blur length must be at least 1");
        }
        if !self.blur_angle_deg.is_finite() {
            return bad("blur angle must be finite");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be non-negative");
        }
        let c = self.crop;
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(c.width) || !frac(c.height) {
            return bad("crop width and height must be in (0, 1]");
        }
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x + c.width <= 1.0 + 1e-12 && c.y + c.height <= 1.0 + 1e-12) {
            return bad("crop window must lie inside the image");
        }
        Ok(())
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, EvalError> {
    let format = image::guess_format(bytes).map_err(|e| EvalError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(EvalError::Decode(format!("unsupported format {format:?}")));
    }
    image::load_from_memory_with_format(bytes, format)
        .map(|img| img.to_rgb8())
        .map_err(|e| EvalError::Decode(e.to_string()))
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("PNG encoding to memory does not fail");
    out.into_inner()
}

/// Decodes PNG/JPEG bytes, degrades, and re-encodes as PNG.
pub fn degrade_bytes(bytes: &[u8], spec: &DegradationSpec) -> Result<Vec<u8>, EvalError> {
    let img = decode_image(bytes)?;
    Ok(encode_png(&degrade_image(&img, spec)?))
}

pub fn degrade_image(img: &RgbImage, spec: &DegradationSpec) -> Result<RgbImage, EvalError> {
    spec.validate()?;
    let mut out = crop(img, spec.crop);
    if spec.blur_length > 1 {
        out = motion_blur(&out, spec.blur_length, spec.blur_angle_deg);
    }
    if spec.sigma > 0.0 {
        out = image::imageops::blur(&out, spec.sigma as f32);
    }
    if spec.gain != 1.0 {
        scale_brightness(&mut out, spec.gain);
    }
    Ok(out)
}

fn crop(img: &RgbImage, rect: CropRect) -> RgbImage {
    if rect == CropRect::FULL {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let x0 = ((rect.x * w as f64).floor() as u32).min(w.saturating_sub(1));
    let y0 = ((rect.y * h as f64).floor() as u32).min(h.saturating_sub(1));
    let cw = ((rect.width * w as f64).round() as u32).clamp(1, w - x0);
    let ch = ((rect.height * h as f64).round() as u32).clamp(1, h - y0);
    image::imageops::crop_imm(img, x0, y0, cw, ch).to_image()
}

/// Normalized 1-D box kernel of `length` taps along `angle_deg`
/// (counter-clockwise from +x), nearest-pixel sampling, edges clamped.
fn motion_blur(img: &RgbImage, length: u32, angle_deg: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let half = (length as f64 - 1.0) / 2.0;
    let offsets: Vec<(i64, i64)> = (0..length)
        .map(|k| {
            let o = k as f64 - half;
            ((o * cos).round() as i64, (-o * sin).round() as i64)
        })
        .collect();
    let norm = length as f64;
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0.0f64; 3];
        for &(dx, dy) in &offsets {
            let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
            let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
            let p = img.get_pixel(sx, sy);
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
        Rgb(acc.map(|a| (a / norm).round().clamp(0.0, 255.0) as u8))
    })
}

fn scale_brightness(img: &mut RgbImage, gain: f64) {
    for p in img.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = (*c as f64 * gain).round().clamp(0.0, 255.0) as u8;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) * 5 % 256) as u8]))
    }

    #[test]
    fn zero_gain_is_black() {
        let spec = DegradationSpec { gain: 0.0, ..DegradationSpec::identity(Scenario::Underexposed) };
        let out = degrade_image(&gradient(16, 16), &spec).unwrap();
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn identity_pipeline_preserves_pixels() {
        let img = gradient(23, 17);
        let out = degrade_image(&img, &DegradationSpec::identity(Scenario::Normal)).unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn identity_blur_of_length_one_explicitly() {
        let img = gradient(9, 9);
        assert_eq!(motion_blur(&img, 1, 37.0).as_raw(), img.as_raw());
    }

    #[test]
    fn horizontal_blur_of_vertical_stripes_averages() {
        // Alternating 0/255 columns.
        let img = RgbImage::from_fn(8, 4, |x, _| if x % 2 == 0 { Rgb([0; 3]) } else { Rgb([255; 3]) });
        let out = motion_blur(&img, 3, 0.0);
        // 3 taps centred: neighbours x-1, x, x+1 → (255 + 0 + 255)/3 = 170 at even interior x.
        assert_eq!(out.get_pixel(2, 1).0, [170; 3]);
        assert_eq!(out.get_pixel(3, 1).0, [85; 3]);
    }

    #[test]
    fn crop_takes_requested_window() {
        let img = gradient(10, 10);
        let rect = CropRect { x: 0.2, y: 0.5, width: 0.5, height: 0.5 };
        let out = crop(&img, rect);
        assert_eq!(out.dimensions(), (5, 5));
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(2, 5));
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = DegradationSpec::identity(Scenario::Normal);
        for spec in [
            DegradationSpec { gain: -0.1, ..base },
            DegradationSpec { gain: 4.5, ..base },
            DegradationSpec { blur_length: 0, ..base },
            DegradationSpec { sigma: -1.0, ..base },
            DegradationSpec { crop: CropRect { width: 0.0, ..CropRect::FULL }, ..base },
            DegradationSpec { crop: CropRect { x: 0.5, ..CropRect::FULL }, ..base },
        ] {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
        for sc in Scenario::ALL {
            DegradationSpec::preset(sc).validate().unwrap();
        }
    }

    #[test]
    fn scenario_labels_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.label().parse::<Scenario>().unwrap(), sc);
        }
        assert!("sunny".parse::<Scenario>().is_err());
    }

    #[test]
    fn undecodable_bytes_rejected() {
        assert!(matches!(degrade_bytes(b"not an image", &DegradationSpec::identity(Scenario::Normal)), Err(EvalError::Decode(_))));
    }

    #[test]
    fn png_round_trip_through_bytes() {
        let img = gradient(12, 12);
        let bytes = encode_png(&img);
        let out = degrade_bytes(&bytes, &DegradationSpec::identity(Scenario::Normal)).unwrap();
        assert_eq!(decode_image(&out).unwrap().as_raw(), img.as_raw());
    }
}
