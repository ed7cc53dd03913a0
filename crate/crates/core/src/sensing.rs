//! Point clouds, inertial samples and the panoramic range-image encoder.
//!
//! The encoder turns an unordered, sparse radar cloud into a fixed
//! elevation × azimuth grid. Each occupied cell stores an inverse-range
//! intensity in [0, 255] so that nearer returns are brighter; empty cells are 0.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{transform_points, PoseSE3, Vec3};
use crate::neural::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub intensities: Option<Vec<f64>>,
    pub timestamp: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, timestamp: f64) -> Self {
        Self {
            points,
            intensities: None,
            timestamp,
        }
    }

    pub fn with_intensities(points: Vec<Vec3>, intensities: Vec<f64>, timestamp: f64) -> Result<Self> {
        if points.len() != intensities.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} intensities",
                points.len(),
                intensities.len()
            )));
        }
        Ok(Self {
            points,
            intensities: Some(intensities),
            timestamp,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &PoseSE3) -> PointCloud {
        PointCloud {
            points: transform_points(pose, &self.points),
            intensities: self.intensities.clone(),
            timestamp: self.timestamp,
        }
    }

    /// Text form: optional `# timestamp <t>` line, then `x y z [intensity]` per point.
    pub fn to_text(&self) -> String {
        let mut out = format!("# timestamp {}\n", self.timestamp);
        for (i, p) in self.points.iter().enumerate() {
            match &self.intensities {
                Some(w) => writeln!(out, "{} {} {} {}", p.x, p.y, p.z, w[i]),
                None => writeln!(out, "{} {} {}", p.x, p.y, p.z),
            }
            .expect("write to string");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut points = Vec::new();
        let mut intensities = Vec::new();
        let mut timestamp = 0.0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let mut it = comment.split_whitespace();
                if it.next() == Some("timestamp") {
                    timestamp = parse_f64(it.next().unwrap_or(""), path, lineno + 1)?;
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let vals = parse_fields(line, path, lineno + 1)?;
            match vals.len() {
                3 | 4 => {
                    points.push(Vec3::new(vals[0], vals[1], vals[2]));
                    if vals.len() == 4 {
                        intensities.push(vals[3]);
                    }
                }
                n => return Err(Error::parse(path, lineno + 1, format!("expected 3 or 4 fields, got {n}"))),
            }
        }
        if intensities.is_empty() {
            Ok(PointCloud::new(points, timestamp))
        } else if intensities.len() == points.len() {
            PointCloud::with_intensities(points, intensities, timestamp)
        } else {
            Err(Error::parse(path, 0, "intensity given for only some points"))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub accel: Vec3,
    pub gyro: Vec3,
    pub timestamp: f64,
}

impl ImuSample {
    /// `[ax, ay, az, gx, gy, gz]`
    pub fn features(&self) -> [f64; 6] {
        [
            self.accel.x,
            self.accel.y,
            self.accel.z,
            self.gyro.x,
            self.gyro.y,
            self.gyro.z,
        ]
    }
}

pub fn imu_to_text(samples: &[ImuSample]) -> String {
    let mut out = String::from("# timestamp ax ay az gx gy gz\n");
    for s in samples {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            s.timestamp, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        )
        .expect("write to string");
    }
    out
}

pub fn parse_imu(text: &str, path: &Path) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = parse_fields(line, path, lineno + 1)?;
        if v.len() != 7 {
            return Err(Error::parse(path, lineno + 1, format!("expected 7 fields, got {}", v.len())));
        }
        if let Some(prev) = out.last() {
            if v[0] <= prev.timestamp {
                return Err(Error::parse(path, lineno + 1, "timestamps must increase strictly"));
            }
        }
        out.push(ImuSample {
            timestamp: v[0],
            accel: Vec3::new(v[1], v[2], v[3]),
            gyro: Vec3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub fn load_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_imu(&text, path)
}

/// One sensor frame: radar cloud, the IMU samples since the previous frame, and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub cloud: PointCloud,
    /// Dense (lidar-like) scan from the same pose, when the source provides one.
    pub dense: Option<PointCloud>,
    pub imu_window: Vec<ImuSample>,
    pub ground_truth: Option<PoseSE3>,
}

impl SensorFrame {
    pub fn timestamp(&self) -> f64 {
        self.cloud.timestamp
    }
}

/// Azimuth `atan2(y, x)` in (−π, π] and elevation `asin(z / |p|)` in [−π/2, π/2].
pub fn spherical_angles(p: &Vec3) -> Result<(f64, f64)> {
    let n = p.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidInput("cannot take angles of a zero-norm point".into()));
    }
    Ok((p.y.atan2(p.x), (p.z / n).clamp(-1.0, 1.0).asin()))
}

/// Geometry of a panoramic range image. Azimuth maps to columns, elevation to rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoramicSpec {
    pub rows: usize,
    pub cols: usize,
    pub delta_alpha: f64,
    pub delta_beta: f64,
    pub alpha_min: f64,
    pub beta_min: f64,
    pub max_range: f64,
}

impl Default for PanoramicSpec {
    /// 120° × 60° field of view on a 32 × 128 grid, 10 m range.
    fn default() -> Self {
        Self::from_fov(120f64.to_radians(), 60f64.to_radians(), 32, 128, 10.0)
    }
}

impl PanoramicSpec {
    /// Centred field of view split evenly into `rows` × `cols` bins.
    pub fn from_fov(h_fov: f64, v_fov: f64, rows: usize, cols: usize, max_range: f64) -> Self {
        Self {
            rows,
            cols,
            delta_alpha: h_fov / cols as f64,
            delta_beta: v_fov / rows as f64,
            alpha_min: -h_fov / 2.0,
            beta_min: -v_fov / 2.0,
            max_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rows > 0
            && self.cols > 0
            && self.delta_alpha > 0.0
            && self.delta_beta > 0.0
            && self.max_range > 0.0
            && self.alpha_min.is_finite()
            && self.beta_min.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid panoramic spec {self:?}")))
        }
    }
}

/// Cell of a panoramic image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bin {
    /// Azimuth bin, i.e. the column.
    pub az: usize,
    /// Elevation bin, i.e. the row.
    pub el: usize,
}

/// Floor-bin the angles; `None` when the point falls outside the image.
pub fn bin_index(alpha: f64, beta: f64, spec: &PanoramicSpec) -> Option<Bin> {
    let a = ((alpha - spec.alpha_min) / spec.delta_alpha).floor();
    let b = ((beta - spec.beta_min) / spec.delta_beta).floor();
    if !(a >= 0.0 && b >= 0.0 && a < spec.cols as f64 && b < spec.rows as f64) {
        return None;
    }
    Some(Bin {
        az: a as usize,
        el: b as usize,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramicImage {
    pub spec: PanoramicSpec,
    /// Row-major `rows × cols` values in [0, 255].
    pub values: Vec<f64>,
}

impl PanoramicImage {
    pub fn zeros(spec: PanoramicSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.rows * spec.cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols + col]
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = format!(
            "{} {} {} {} {} {} {}\n",
            s.rows, s.cols, s.delta_alpha, s.delta_beta, s.alpha_min, s.beta_min, s.max_range
        );
        for row in self.values.chunks(s.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let h = parse_fields(header, path, hl + 1)?;
        if h.len() != 7 {
            return Err(Error::parse(path, hl + 1, "header needs 7 fields"));
        }
        let spec = PanoramicSpec {
            rows: h[0] as usize,
            cols: h[1] as usize,
            delta_alpha: h[2],
            delta_beta: h[3],
            alpha_min: h[4],
            beta_min: h[5],
            max_range: h[6],
        };
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.rows * spec.cols);
        for (ln, line) in lines {
            let row = parse_fields(line, path, ln + 1)?;
            if row.len() != spec.cols {
                return Err(Error::parse(path, ln + 1, format!("expected {} columns", spec.cols)));
            }
            values.extend(row);
        }
        if values.len() != spec.rows * spec.cols {
            return Err(Error::parse(path, 0, format!("expected {} rows", spec.rows)));
        }
        Ok(Self { spec, values })
    }
}

/// Encode a cloud as a panoramic inverse-range image.
///
/// Each in-view point writes `255 · (1 − min(|p| / max_range, 1))` into its
/// cell; when several points share a cell the largest value (nearest point) wins.
pub fn encode_panoramic(cloud: &PointCloud, spec: &PanoramicSpec) -> Result<PanoramicImage> {
    spec.validate()?;
    let mut img = PanoramicImage::zeros(*spec);
    for p in &cloud.points {
        let Ok((alpha, beta)) = spherical_angles(p) else {
            continue;
        };
        let Some(bin) = bin_index(alpha, beta, spec) else {
            continue;
        };
        let value = 255.0 * (1.0 - (p.norm() / spec.max_range).min(1.0));
        let cell = &mut img.values[bin.el * spec.cols + bin.az];
        if value > *cell {
            *cell = value;
        }
    }
    Ok(img)
}

/// Stack two consecutive images into a `[2, rows, cols]` tensor, subtracting `mean` from every value.
pub fn stack_pair(prev: &PanoramicImage, curr: &PanoramicImage, mean: f64) -> Result<Tensor> {
    if (prev.spec.rows, prev.spec.cols) != (curr.spec.rows, curr.spec.cols) {
        return Err(Error::Shape(format!(
            "cannot stack {}x{} with {}x{}",
            prev.spec.rows, prev.spec.cols, curr.spec.rows, curr.spec.cols
        )));
    }
    let data = prev
        .values
        .iter()
        .chain(&curr.values)
        .map(|v| v - mean)
        .collect();
    Tensor::new(vec![2, prev.spec.rows, prev.spec.cols], data)
}

/// Union of clouds after moving each into a common frame with its extrinsic.
pub fn merge_clouds(clouds: &[(PointCloud, PoseSE3)]) -> PointCloud {
    let mut points = Vec::new();
    let all_have_intensity = clouds.iter().all(|(c, _)| c.intensities.is_some());
    let mut intensities = Vec::new();
    for (cloud, extrinsic) in clouds {
        points.extend(transform_points(extrinsic, &cloud.points));
        if all_have_intensity {
            intensities.extend(cloud.intensities.as_ref().expect("checked").iter().copied());
        }
    }
    let timestamp = clouds.first().map(|(c, _)| c.timestamp).unwrap_or(0.0);
    PointCloud {
        points,
        intensities: (all_have_intensity && !clouds.is_empty()).then_some(intensities),
        timestamp,
    }
}

pub(crate) fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("not a number: {s:?}")))
}

pub(crate) fn parse_fields(line: &str, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| parse_f64(tok, path, lineno))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn angles_of_axis_points() {
        assert_eq!(spherical_angles(&Vec3::x()).unwrap(), (0.0, 0.0));
        let (a, b) = spherical_angles(&Vec3::y()).unwrap();
        assert!((a - FRAC_PI_2).abs() < 1e-15 && b == 0.0);
        let (a, b) = spherical_angles(&Vec3::new(1.0, 0.0, 1.0)).unwrap();
        assert!(a == 0.0 && (b - FRAC_PI_4).abs() < 1e-15);
        assert!(spherical_angles(&Vec3::zeros()).is_err());
    }

    #[test]
    fn binning_uses_floor_from_the_field_edge() {
        let spec = PanoramicSpec::default();
        assert_eq!(
            bin_index(spec.alpha_min, spec.beta_min, &spec),
            Some(Bin { az: 0, el: 0 })
        );
        let b = bin_index(spec.alpha_min + 1.5 * spec.delta_alpha, 0.0, &spec).unwrap();
        assert_eq!(b.az, 1);
        assert_eq!(bin_index(-spec.alpha_min + 1e-6, 0.0, &spec), None);
        assert_eq!(bin_index(0.0, spec.beta_min - 1e-6, &spec), None);
    }

    #[test]
    fn default_geometry_is_32_by_128() {
        let s = PanoramicSpec::default();
        assert_eq!((s.rows, s.cols), (32, 128));
        assert_eq!((120f64.to_radians() / s.delta_alpha).ceil() as usize, 128);
        assert_eq!((60f64.to_radians() / s.delta_beta).ceil() as usize, 32);
    }

    #[test]
    fn encode_rules() {
        let spec = PanoramicSpec::default();
        let empty = encode_panoramic(&PointCloud::default(), &spec).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));

        let far = PointCloud::new(vec![Vec3::new(spec.max_range, 0.0, 0.0)], 0.0);
        assert!(encode_panoramic(&far, &spec).unwrap().values.iter().all(|&v| v == 0.0));

        // Two returns along the same ray: the nearer one wins.
        let cloud = PointCloud::new(vec![Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], 0.0);
        let img = encode_panoramic(&cloud, &spec).unwrap();
        let b = bin_index(0.0, 0.0, &spec).unwrap();
        assert!((img.get(b.el, b.az) - 229.5).abs() < 1e-12);
        assert_eq!(img.values.iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn stack_pair_shapes_and_mismatch() {
        let spec = PanoramicSpec::default();
        let a = PanoramicImage::zeros(spec);
        let t = stack_pair(&a, &a, 0.0).unwrap();
        assert_eq!(t.shape(), &[2, 32, 128]);
        let other = PanoramicImage::zeros(PanoramicSpec::from_fov(1.0, 1.0, 4, 4, 5.0));
        assert!(matches!(stack_pair(&a, &other, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn merge_cardinality_and_identity() {
        let c = PointCloud::new((0..50).map(|i| Vec3::new(i as f64, 1.0, 0.0)).collect(), 0.0);
        let single = merge_clouds(&[(c.clone(), PoseSE3::identity())]);
        assert_eq!(single.points, c.points);
        let shifted = PoseSE3::from_translation(Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(merge_clouds(&[(c.clone(), PoseSE3::identity()), (c, shifted)]).len(), 100);
    }

    #[test]
    fn text_formats_round_trip() {
        let p = Path::new("mem");
        let cloud = PointCloud::with_intensities(
            vec![Vec3::new(1.5, -2.0, 0.25), Vec3::new(0.1, 0.2, 0.3)],
            vec![3.0, 4.0],
            0.05,
        )
        .unwrap();
        assert_eq!(PointCloud::parse(&cloud.to_text(), p).unwrap(), cloud);

        let imu = vec![
            ImuSample { accel: Vec3::new(0.0, 0.0, 9.81), gyro: Vec3::new(0.01, 0.0, -0.2), timestamp: 0.01 },
            ImuSample { accel: Vec3::new(0.1, 0.0, 9.8), gyro: Vec3::zeros(), timestamp: 0.02 },
        ];
        assert_eq!(parse_imu(&imu_to_text(&imu), p).unwrap(), imu);

        let spec = PanoramicSpec::from_fov(1.0, 0.5, 2, 3, 10.0);
        let img = PanoramicImage { spec, values: vec![0.0, 1.0, 2.5, 255.0, 0.0, 7.0] };
        assert_eq!(PanoramicImage::parse(&img.to_text(), p).unwrap(), img);
    }

    #[test]
    fn parse_errors_report_lines() {
        let err = PointCloud::parse("1 2 3\n1 2\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_imu("0.1 0 0 0 0 0 0\n0.1 0 0 0 0 0 0\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
