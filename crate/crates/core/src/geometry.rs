//! Similarity-transform face alignment from a 5-point template and
//! anti-aliased landmark mask rendering.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// 68 facial landmark points in source-image pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks68 {
    points: Vec<(f64, f64)>,
}

impl Landmarks68 {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Landmarks68> {
        if points.len() != 68 {
            return Err(Error::Shape(format!(
                "expected 68 landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Shape("landmarks must be finite".into()));
        }
        Ok(Landmarks68 { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        self.points[i]
    }

    /// Apply a point transform to every landmark.
    pub fn map(&self, t: &SimilarityTransform) -> Landmarks68 {
        Landmarks68 {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }
}

/// Canonical 5-point face template for a 112x112 aligned crop: left eye
/// center, right eye center, nose tip, left mouth corner, right mouth corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Template5 {
    pub points: [(f64, f64); 5],
}

impl Default for Template5 {
    fn default() -> Template5 {
        Template5 {
            points: [
                (38.2946, 51.6963),
                (73.5318, 51.5014),
                (56.0252, 71.7366),
                (41.5493, 92.3655),
                (70.7299, 92.2041),
            ],
        }
    }
}

/// Rotation + uniform scale + translation, as scale * R(rotation) | t.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise in (x right, y down) coordinates.
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation: 0.0,
        translation: (0.0, 0.0),
    };

    pub fn new(scale: f64, rotation: f64, translation: (f64, f64)) -> SimilarityTransform {
        SimilarityTransform {
            scale,
            rotation,
            translation,
        }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        (
            self.scale * (cos * x - sin * y) + self.translation.0,
            self.scale * (sin * x + cos * y) + self.translation.1,
        )
    }

    /// 2x3 row-major matrix [a -b tx; b a ty].
    pub fn matrix(&self) -> [f64; 6] {
        let (sin, cos) = self.rotation.sin_cos();
        let (a, b) = (self.scale * cos, self.scale * sin);
        [a, -b, self.translation.0, b, a, self.translation.1]
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let rot = -self.rotation;
        let (sin, cos) = rot.sin_cos();
        let (tx, ty) = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: rot,
            translation: (
                -inv_scale * (cos * tx - sin * ty),
                -inv_scale * (sin * tx + cos * ty),
            ),
        }
    }
}

/// Reduce 68 landmarks to the 5 template correspondences: eye centers are
/// the means of the eye rings (36-41, 42-47), the nose tip is point 30 and
/// the mouth corners are points 48 and 54.
pub fn five_points_from_68(lm: &Landmarks68) -> [(f64, f64); 5] {
    let mean = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        let (sx, sy) = range.fold((0.0, 0.0), |(sx, sy), i| {
            let (x, y) = lm.point(i);
            (sx + x, sy + y)
        });
        (sx / n, sy / n)
    };
    [
        mean(36..42),
        mean(42..48),
        lm.point(30),
        lm.point(48),
        lm.point(54),
    ]
}

/// Least-squares similarity transform mapping `src` onto `dst`.
///
/// Closed form via the centered cross-covariance: with centered points s, d
/// the optimal linear part is (a, b) = (Σ s·d, Σ s×d) / Σ|s|², which is the
/// polar-decomposition rotation with scale equal to the trace ratio; the
/// translation closes the means. Returns the transform and the RMS residual.
pub fn estimate_similarity(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
) -> Result<(SimilarityTransform, f64)> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!(
            "point counts differ: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::Degenerate("need at least 2 points".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[(f64, f64)]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    };
    let (ms_x, ms_y) = mean(src);
    let (md_x, md_y) = mean(dst);

    let mut sxx = 0.0; // Σ |s|²
    let mut dot = 0.0; // Σ s·d
    let mut cross = 0.0; // Σ s×d
    for ((sx, sy), (dx, dy)) in src.iter().zip(dst) {
        let (sx, sy) = (sx - ms_x, sy - ms_y);
        let (dx, dy) = (dx - md_x, dy - md_y);
        sxx += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    if sxx < 1e-12 {
        return Err(Error::Degenerate("source points are coincident".into()));
    }

    let a = dot / sxx;
    let b = cross / sxx;
    let scale = a.hypot(b);
    if scale < 1e-12 {
        return Err(Error::Degenerate("destination points are coincident".into()));
    }
    let rotation = b.atan2(a);

    let (sin, cos) = rotation.sin_cos();
    let translation = (
        md_x - scale * (cos * ms_x - sin * ms_y),
        md_y - scale * (sin * ms_x + cos * ms_y),
    );
    let transform = SimilarityTransform::new(scale, rotation, translation);

    let sq_sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(&s, &d)| {
            let (px, py) = transform.apply(s);
            (px - d.0).powi(2) + (py - d.1).powi(2)
        })
        .sum();
    Ok((transform, (sq_sum / n).sqrt()))
}

/// Warp an image into an aligned crop by sampling the source at `t(p)` for
/// every output pixel `p` (bilinear; out-of-bounds source pixels are black).
///
/// `t` maps output (aligned) coordinates to source-image coordinates; invert
/// the landmark-to-template transform before passing it here.
pub fn align_face(image: &RgbImage, t: &SimilarityTransform, out_size: (u32, u32)) -> RgbImage {
    let (out_w, out_h) = out_size;
    let mut out = RgbImage::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = t.apply((x as f64, y as f64));
            let px = sample_bilinear_rgb(image, sx, sy);
            out.put_pixel(x, y, px);
        }
    }
    out
}

/// Grayscale counterpart of [`align_face`].
pub fn warp_gray(image: &GrayImage, t: &SimilarityTransform, out_size: (u32, u32)) -> GrayImage {
    let (out_w, out_h) = out_size;
    let mut out = GrayImage::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = t.apply((x as f64, y as f64));
            let v = sample_bilinear_plane(sx, sy, image.width(), image.height(), |px, py| {
                image.get_pixel(px, py)[0] as f64
            });
            out.put_pixel(x, y, image::Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
    out
}

fn sample_bilinear_rgb(image: &RgbImage, sx: f64, sy: f64) -> image::Rgb<u8> {
    let mut channels = [0u8; 3];
    for (c, out) in channels.iter_mut().enumerate() {
        let v = sample_bilinear_plane(sx, sy, image.width(), image.height(), |px, py| {
            image.get_pixel(px, py)[c] as f64
        });
        *out = v.round().clamp(0.0, 255.0) as u8;
    }
    image::Rgb(channels)
}

fn sample_bilinear_plane(
    sx: f64,
    sy: f64,
    width: u32,
    height: u32,
    get: impl Fn(u32, u32) -> f64,
) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;

    let fetch = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            get(xi as u32, yi as u32)
        }
    };

    let v00 = fetch(x0, y0);
    let v10 = fetch(x0 + 1.0, y0);
    let v01 = fetch(x0, y0 + 1.0);
    let v11 = fetch(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Contour groups over the 68 landmarks and the stroke thickness used when
/// rasterizing the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// (landmark indices, closed) per polyline.
    pub groups: Vec<(Vec<usize>, bool)>,
    /// Stroke thickness in output pixels.
    pub thickness: f64,
}

impl Default for MaskSpec {
    fn default() -> MaskSpec {
        MaskSpec {
            groups: vec![
                ((17..=21).collect(), false), // left brow
                ((22..=26).collect(), false), // right brow
                ((36..=41).collect(), true),  // left eye contour
                ((42..=47).collect(), true),  // right eye contour
                ((27..=30).collect(), false), // nose bridge
                ((31..=35).collect(), false), // nose base
                ((48..=59).collect(), true),  // outer lip
                ((0..=16).collect(), false),  // jaw / chin
            ],
            thickness: 2.0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        for (indices, _) in &self.groups {
            if indices.iter().any(|&i| i >= 68) {
                return Err(Error::Config("mask contour index outside 0..68".into()));
            }
        }
        Ok(())
    }
}

/// Render the landmark contours as an anti-aliased stroke mask.
///
/// Landmarks are mapped through `t` into output coordinates, each group is
/// drawn as a polyline (closed where specified) and pixel intensity falls
/// off linearly over one pixel at the stroke boundary: full at distances
/// below thickness/2 - 1/2, zero beyond thickness/2 + 1/2.
pub fn render_mask(
    lm: &Landmarks68,
    t: &SimilarityTransform,
    spec: &MaskSpec,
    out_size: (u32, u32),
) -> Result<GrayImage> {
    spec.validate()?;
    let (out_w, out_h) = out_size;
    let mapped = lm.map(t);
    let mut coverage = vec![0.0f64; (out_w * out_h) as usize];
    let reach = spec.thickness / 2.0 + 0.5;

    for (indices, closed) in &spec.groups {
        let count = indices.len();
        if count < 2 {
            continue;
        }
        let segments = if *closed { count } else { count - 1 };
        for s in 0..segments {
            let p0 = mapped.point(indices[s]);
            let p1 = mapped.point(indices[(s + 1) % count]);
            stroke_segment(&mut coverage, out_w, out_h, p0, p1, reach);
        }
    }

    let mut out = GrayImage::new(out_w, out_h);
    for (i, c) in coverage.iter().enumerate() {
        let v = (c * 255.0).round().clamp(0.0, 255.0) as u8;
        out.put_pixel(i as u32 % out_w, i as u32 / out_w, image::Luma([v]));
    }
    Ok(out)
}

fn stroke_segment(
    coverage: &mut [f64],
    width: u32,
    height: u32,
    p0: (f64, f64),
    p1: (f64, f64),
    reach: f64,
) {
    let min_x = (p0.0.min(p1.0) - reach).floor().max(0.0) as i64;
    let max_x = (p0.0.max(p1.0) + reach).ceil().min(width as f64 - 1.0) as i64;
    let min_y = (p0.1.min(p1.1) - reach).floor().max(0.0) as i64;
    let max_y = (p0.1.max(p1.1) + reach).ceil().min(height as f64 - 1.0) as i64;
    if min_x > max_x || min_y > max_y {
        return;
    }

    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let d = point_segment_distance((x as f64, y as f64), p0, p1);
            // linear falloff over one pixel around the stroke edge
            let c = (reach - d).clamp(0.0, 1.0);
            if c > 0.0 {
                let idx = (y as u32 * width + x as u32) as usize;
                coverage[idx] = coverage[idx].max(c);
            }
        }
    }
}

/// Euclidean distance from a point to a line segment.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * abx, a.1 + t * aby);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// A synthetic but geometrically consistent 68-point face in the canonical
/// 112x112 frame: its five-point reduction equals [`Template5::default`]
/// exactly, so aligning it to the template is the identity transform.
pub fn canonical_landmarks() -> Landmarks68 {
    let template = Template5::default();
    let mut pts = vec![(0.0, 0.0); 68];

    // jaw 0-16: elliptic arc from ear level around the chin
    for k in 0..17 {
        let alpha = (175.0 - k as f64 * 170.0 / 16.0).to_radians();
        pts[k] = (56.0 + 40.0 * alpha.cos(), 55.0 + 52.0 * alpha.sin());
    }
    // brows 17-21 and 22-26: shallow arcs above the eyes
    let brow_lift = [0.0, 1.5, 2.0, 1.5, 0.0];
    for k in 0..5 {
        pts[17 + k] = (28.0 + 5.0 * k as f64, 44.0 - brow_lift[k]);
        pts[22 + k] = (64.0 + 5.0 * k as f64, 44.0 - brow_lift[k]);
    }
    // nose bridge 27-30; point 30 is the template nose tip
    let nose = template.points[2];
    for k in 0..3 {
        pts[27 + k] = (56.0, 53.0 + 6.0 * k as f64);
    }
    pts[30] = nose;
    // nose base 31-35
    for k in 0..5 {
        pts[31 + k] = (48.0 + 4.0 * k as f64, 76.0 + if k == 2 { 1.0 } else { 0.0 });
    }
    // eye rings 36-41 and 42-47: hexagons whose means are the eye centers
    for (ring_start, center) in [(36usize, template.points[0]), (42, template.points[1])] {
        for k in 0..6 {
            let ang = (k as f64 * 60.0).to_radians();
            pts[ring_start + k] = (center.0 + 6.0 * ang.cos(), center.1 + 3.0 * ang.sin());
        }
    }
    // outer lip 48-59: tilted ellipse through the template mouth corners
    let left = template.points[3];
    let right = template.points[4];
    let cx = (left.0 + right.0) / 2.0;
    let cy = (left.1 + right.1) / 2.0;
    let rx = 0.5 * ((right.0 - left.0).powi(2) + (right.1 - left.1).powi(2)).sqrt();
    let ry = 5.0;
    let phi = (right.1 - left.1).atan2(right.0 - left.0);
    let (u, v) = ((phi.cos(), phi.sin()), (-phi.sin(), phi.cos()));
    for k in 0..12 {
        let theta = std::f64::consts::PI - k as f64 * std::f64::consts::PI / 6.0;
        let (ex, ey) = (rx * theta.cos(), -ry * theta.sin());
        pts[48 + k] = (cx + ex * u.0 + ey * v.0, cy + ex * u.1 + ey * v.1);
    }
    // inner lip 60-67: smaller ellipse
    for k in 0..8 {
        let theta = std::f64::consts::PI - k as f64 * std::f64::consts::PI / 4.0;
        let (ex, ey) = (0.6 * rx * theta.cos(), -0.45 * ry * theta.sin());
        pts[60 + k] = (cx + ex * u.0 + ey * v.0, cy + ex * u.1 + ey * v.1);
    }

    Landmarks68::new(pts).expect("canonical layout is well-formed")
}

/// Parse one landmark file: 68 lines of `x,y`.
pub fn parse_landmarks_text(text: &str) -> Result<Landmarks68> {
    let mut points = Vec::with_capacity(68);
    for (idx, line) in text.lines().enumerate() {
        let mut parts = line.split(',');
        let (x, y) = match (parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), None) => (x, y),
            _ => {
                return Err(Error::Format {
                    path: "<string>".into(),
                    line: idx + 1,
                    message: format!("expected 'x,y', got '{line}'"),
                })
            }
        };
        let x: f64 = x.trim().parse().map_err(|_| Error::Format {
            path: "<string>".into(),
            line: idx + 1,
            message: format!("non-numeric x '{}'", x.trim()),
        })?;
        let y: f64 = y.trim().parse().map_err(|_| Error::Format {
            path: "<string>".into(),
            line: idx + 1,
            message: format!("non-numeric y '{}'", y.trim()),
        })?;
        points.push((x, y));
    }
    Landmarks68::new(points)
}

pub fn read_landmarks(path: &Path) -> Result<Landmarks68> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks_text(&text).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

pub fn write_landmarks_text(lm: &Landmarks68) -> String {
    let mut out = String::new();
    for (x, y) in lm.points() {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

/// Write a grayscale image as binary PGM (P5).
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    buf.extend_from_slice(image.as_raw());
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
