//! Turning sensor sequences into network inputs.

use super::network::{BatchInput, NetworkConfig};
use super::tensor::Tensor;
use crate::geometry::relative_between;
use crate::sensing::{encode_panoramic, ImuSample, PanoramicSpec, SensorFrame};
use crate::{Error, Result};

/// Panorama layout used for network inputs at the configured resolution.
pub fn panorama_spec(config: &NetworkConfig) -> PanoramicSpec {
    let d = PanoramicSpec::default();
    PanoramicSpec::from_fov(
        d.delta_alpha * d.cols as f64,
        d.delta_beta * d.rows as f64,
        config.image_rows,
        config.image_cols,
        d.max_range,
    )
}

/// Frames encoded once: one panorama per frame, one fixed-length IMU window per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub timestamps: Vec<f64>,
    pub radar: Vec<Vec<f64>>,
    pub depth: Option<Vec<Vec<f64>>>,
    /// `imu[k]` holds `L` feature rows for the pair (frame k, frame k+1).
    pub imu: Vec<Vec<[f64; 6]>>,
    /// Ground-truth relative pose per pair, when every frame carries ground truth.
    pub targets: Option<Vec<[f64; 6]>>,
}

impl EncodedSequence {
    pub fn pairs(&self) -> usize {
        self.timestamps.len().saturating_sub(1)
    }
}

/// Resample a window to exactly `len` rows by nearest index; an empty window yields `None`.
pub fn resample_window(window: &[ImuSample], len: usize) -> Option<Vec<[f64; 6]>> {
    if window.is_empty() {
        return None;
    }
    let n = window.len();
    Some(
        (0..len)
            .map(|j| {
                let idx = if len == 1 {
                    n - 1
                } else {
                    ((j as f64) * (n - 1) as f64 / (len - 1) as f64).round() as usize
                };
                window[idx].features()
            })
            .collect(),
    )
}

/// Keep every `factor`-th frame, merging the skipped IMU windows into the kept ones.
pub fn subsample_frames(frames: &[SensorFrame], factor: usize) -> Result<Vec<SensorFrame>> {
    if factor == 0 {
        return Err(Error::InvalidInput("subsample factor must be at least 1".into()));
    }
    let mut out: Vec<SensorFrame> = Vec::with_capacity(frames.len() / factor + 1);
    let mut pending: Vec<ImuSample> = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        pending.extend_from_slice(&f.imu_window);
        if k % factor == 0 {
            let mut kept = f.clone();
            kept.imu_window = if k == 0 { Vec::new() } else { std::mem::take(&mut pending) };
            pending.clear();
            out.push(kept);
        }
    }
    Ok(out)
}

/// Encode panoramas, IMU windows and (when available) relative-pose targets.
pub fn encode_frames(frames: &[SensorFrame], config: &NetworkConfig) -> Result<EncodedSequence> {
    if frames.len() < 2 {
        return Err(Error::DatasetTooShort(format!("need at least 2 frames, got {}", frames.len())));
    }
    let spec = panorama_spec(config);
    let radar = frames
        .iter()
        .map(|f| encode_panoramic(&f.cloud, &spec).map(|img| img.values))
        .collect::<Result<Vec<_>>>()?;
    let depth = if config.use_depth {
        Some(
            frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let dense = f
                        .dense
                        .as_ref()
                        .ok_or_else(|| Error::InvalidInput(format!("depth modality enabled but frame {k} has no dense scan")))?;
                    encode_panoramic(dense, &spec).map(|img| img.values)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let imu = frames[1..]
        .iter()
        .map(|f| resample_window(&f.imu_window, config.imu_window).unwrap_or_else(|| vec![[0.0; 6]; config.imu_window]))
        .collect();
    let targets = frames
        .iter()
        .map(|f| f.ground_truth)
        .collect::<Option<Vec<_>>>()
        .map(|gt| gt.windows(2).map(|w| relative_between(&w[0], &w[1]).0.to_vector()).collect());
    Ok(EncodedSequence {
        timestamps: frames.iter().map(SensorFrame::timestamp).collect(),
        radar,
        depth,
        imu,
        targets,
    })
}

/// Global per-modality means subtracted from the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Normalizer {
    pub radar_mean: f64,
    pub depth_mean: f64,
    pub imu_mean: f64,
}

impl Normalizer {
    pub fn fit(data: &[EncodedSequence]) -> Self {
        fn mean<'a>(rows: impl Iterator<Item = &'a [f64]>) -> f64 {
            let (sum, n) = rows.fold((0.0, 0usize), |(s, n), r| (s + r.iter().sum::<f64>(), n + r.len()));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        }
        Self {
            radar_mean: mean(data.iter().flat_map(|s| s.radar.iter().map(Vec::as_slice))),
            depth_mean: mean(
                data.iter()
                    .filter_map(|s| s.depth.as_ref())
                    .flat_map(|d| d.iter().map(Vec::as_slice)),
            ),
            imu_mean: mean(data.iter().flat_map(|s| s.imu.iter().flatten().map(|r| r.as_slice()))),
        }
    }
}

/// Network input for pairs `start .. start + len` (pair k joins frames k and k+1).
pub fn batch(seq: &EncodedSequence, start: usize, len: usize, norm: &Normalizer, config: &NetworkConfig) -> Result<BatchInput> {
    if len == 0 || start + len > seq.pairs() {
        return Err(Error::InvalidInput(format!(
            "pairs {start}..{} outside a sequence of {} pairs",
            start + len,
            seq.pairs()
        )));
    }
    let pixels = config.image_rows * config.image_cols;
    let stack = |frames: &[Vec<f64>], mean: f64| -> Result<Tensor> {
        let mut data = Vec::with_capacity(len * 2 * pixels);
        for k in start..start + len {
            for img in [&frames[k], &frames[k + 1]] {
                if img.len() != pixels {
                    return Err(Error::Shape(format!("panorama of {} cells, expected {pixels}", img.len())));
                }
                data.extend(img.iter().map(|v| v - mean));
            }
        }
        Tensor::new(vec![len, 2, config.image_rows, config.image_cols], data)
    };
    let radar = stack(&seq.radar, norm.radar_mean)?;
    let depth = match (config.use_depth, &seq.depth) {
        (true, Some(d)) => Some(stack(d, norm.depth_mean)?),
        (true, None) => return Err(Error::InvalidInput("depth modality enabled but no depth images".into())),
        (false, _) => None,
    };
    let l = config.imu_window;
    let mut imu = vec![0.0; l * len * 6];
    for (t, window) in seq.imu[start..start + len].iter().enumerate() {
        if window.len() != l {
            return Err(Error::Shape(format!("IMU window of {} rows, expected {l}", window.len())));
        }
        for (s, row) in window.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                imu[(s * len + t) * 6 + c] = v - norm.imu_mean;
            }
        }
    }
    Ok(BatchInput {
        radar,
        imu: Tensor::new(vec![l, len, 6], imu)?,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PoseSE3, Vec3};
    use crate::neural::network::Profile;
    use crate::sensing::PointCloud;

    fn frames(n: usize) -> Vec<SensorFrame> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.05;
                SensorFrame {
                    cloud: PointCloud::new(vec![Vec3::new(3.0, 0.1 * k as f64, 0.0)], t),
                    dense: None,
                    imu_window: if k == 0 {
                        vec![]
                    } else {
                        (1..=5)
                            .map(|j| ImuSample {
                                timestamp: t - 0.05 + j as f64 * 0.01,
                                accel: Vec3::new(0.0, 0.0, 9.81),
                                gyro: Vec3::new(0.0, 0.0, j as f64),
                            })
                            .collect()
                    },
                    ground_truth: Some(PoseSE3::from_translation(Vec3::new(0.05 * k as f64, 0.0, 0.0))),
                }
            })
            .collect()
    }

    #[test]
    fn resampling_covers_the_window() {
        let f = frames(2);
        let r = resample_window(&f[1].imu_window, 10).unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r[0][5], 1.0);
        assert_eq!(r[9][5], 5.0);
        assert!(resample_window(&[], 4).is_none());
    }

    #[test]
    fn subsampling_merges_windows() {
        let f = frames(7);
        let s = subsample_frames(&f, 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].imu_window.len(), 15);
        assert_eq!(s[2].timestamp(), f[6].timestamp());
        assert_eq!(subsample_frames(&f, 1).unwrap(), f);
        assert!(subsample_frames(&f, 0).is_err());
    }

    #[test]
    fn batch_layout() {
        let cfg = NetworkConfig::profile(Profile::Toy);
        let enc = encode_frames(&frames(5), &cfg).unwrap();
        assert_eq!(enc.pairs(), 4);
        let targets = enc.targets.as_ref().unwrap();
        assert!((targets[2][0] - 0.05).abs() < 1e-12);
        let norm = Normalizer::fit(std::slice::from_ref(&enc));
        let b = batch(&enc, 1, 3, &norm, &cfg).unwrap();
        assert_eq!(b.radar.shape(), &[3, 2, 32, 128]);
        assert_eq!(b.imu.shape(), &[10, 3, 6]);
        let pixels = 32 * 128;
        // Second slot of pair t equals first slot of pair t+1.
        assert_eq!(&b.radar.data()[pixels..2 * pixels], &b.radar.data()[2 * pixels..3 * pixels]);
        assert!(batch(&enc, 2, 3, &norm, &cfg).is_err());
        assert!(encode_frames(&frames(1), &cfg).is_err());
    }
}
