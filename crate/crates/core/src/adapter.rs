//! Measurement-noise adapters.
//!
//! An adapter maps the recent IMU history to the diagonal of the
//! pseudo-measurement covariance. The learned one is a small dilated 1-D CNN:
//!
//! ```text
//! window [W x 6] -> normalize -> conv(6->32, k=6, d=2) -> relu
//!                -> conv(32->32, k=5, d=3) -> relu -> last frame
//!                -> fc(32->3) -> z = 3 tanh(.)
//! N = diag(sigma0_k * 10^z_k)
//! ```
//!
//! Neither convolution is padded, so the last output frame sees exactly the
//! last 23 input frames.

use crate::dataset::ImuSample;
use crate::geometry::{Mat3, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const CHANNELS: usize = 6;
pub const HIDDEN: usize = 32;
pub const KERNEL1: usize = 6;
pub const DILATION1: usize = 2;
pub const KERNEL2: usize = 5;
pub const DILATION2: usize = 3;
/// Frames one output depends on: `1 + (6-1)*2 + (5-1)*3`.
pub const RECEPTIVE_FIELD: usize = 1 + (KERNEL1 - 1) * DILATION1 + (KERNEL2 - 1) * DILATION2;
pub const FORMAT_VERSION: u32 = 1;
/// Reference baseline variances (forward, lateral, up).
pub const DEFAULT_SIGMA0: [f64; 3] = [3.0, 2.0, 0.2];
const Z_SCALE: f64 = 3.0;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("cannot read weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("weight file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported weight format version {found} (expected {FORMAT_VERSION})")]
    UnknownVersion { found: u32 },
    #[error("shape mismatch in {field}: expected {expected}, found {found}")]
    Shape {
        field: String,
        expected: String,
        found: String,
    },
    #[error("norm_std[{index}] = {value} is not positive")]
    NonPositiveStd { index: usize, value: f64 },
    #[error("unsupported activation {0:?}")]
    Activation(String),
    #[error("weight {field} is not finite")]
    NonFinite { field: String },
    #[error("window buffer holds {len} of {capacity} frames")]
    NotFull { len: usize, capacity: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `[out][in][k]`.
    pub weight: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[out][in]`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Serialized adapter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterWeights {
    pub format_version: u32,
    pub activation: String,
    pub window: usize,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub fc: DenseLayer,
    pub sigma0: Vec<f64>,
}

fn shape_err(field: &str, expected: usize, found: usize) -> AdapterError {
    AdapterError::Shape {
        field: field.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn check_len(field: &str, v: &[f64], n: usize) -> Result<(), AdapterError> {
    if v.len() != n {
        return Err(shape_err(field, n, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AdapterError::NonFinite {
            field: field.into(),
        });
    }
    Ok(())
}

fn check_conv(
    name: &str,
    c: &ConvLayer,
    out: usize,
    inp: usize,
    k: usize,
) -> Result<(), AdapterError> {
    let w = format!("{name}.weight");
    if c.weight.len() != out {
        return Err(shape_err(&w, out, c.weight.len()));
    }
    for (o, row) in c.weight.iter().enumerate() {
        if row.len() != inp {
            return Err(shape_err(&format!("{w}[{o}]"), inp, row.len()));
        }
        for (i, taps) in row.iter().enumerate() {
            check_len(&format!("{w}[{o}][{i}]"), taps, k)?;
        }
    }
    check_len(&format!("{name}.bias"), &c.bias, out)
}

impl AdapterWeights {
    /// All-zero network with identity normalization.
    pub fn zeros() -> Self {
        let conv = |out: usize, inp: usize, k: usize| ConvLayer {
            weight: vec![vec![vec![0.0; k]; inp]; out],
            bias: vec![0.0; out],
        };
        Self {
            format_version: FORMAT_VERSION,
            activation: "relu".into(),
            window: RECEPTIVE_FIELD,
            norm_mean: vec![0.0; CHANNELS],
            norm_std: vec![1.0; CHANNELS],
            conv1: conv(HIDDEN, CHANNELS, KERNEL1),
            conv2: conv(HIDDEN, HIDDEN, KERNEL2),
            fc: DenseLayer {
                weight: vec![vec![0.0; HIDDEN]; 3],
                bias: vec![0.0; 3],
            },
            sigma0: DEFAULT_SIGMA0.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.format_version != FORMAT_VERSION {
            return Err(AdapterError::UnknownVersion {
                found: self.format_version,
            });
        }
        if self.activation != "relu" {
            return Err(AdapterError::Activation(self.activation.clone()));
        }
        if self.window < RECEPTIVE_FIELD {
            return Err(AdapterError::Shape {
                field: "window".into(),
                expected: format!(">= {RECEPTIVE_FIELD}"),
                found: self.window.to_string(),
            });
        }
        check_len("norm_mean", &self.norm_mean, CHANNELS)?;
        check_len("norm_std", &self.norm_std, CHANNELS)?;
        if let Some((index, &value)) = self.norm_std.iter().enumerate().find(|(_, s)| **s <= 0.0) {
            return Err(AdapterError::NonPositiveStd { index, value });
        }
        check_conv("conv1", &self.conv1, HIDDEN, CHANNELS, KERNEL1)?;
        check_conv("conv2", &self.conv2, HIDDEN, HIDDEN, KERNEL2)?;
        if self.fc.weight.len() != 3 {
            return Err(shape_err("fc.weight", 3, self.fc.weight.len()));
        }
        for (o, row) in self.fc.weight.iter().enumerate() {
            check_len(&format!("fc.weight[{o}]"), row, HIDDEN)?;
        }
        check_len("fc.bias", &self.fc.bias, 3)?;
        check_len("sigma0", &self.sigma0, 3)?;
        if self.sigma0.iter().any(|s| *s <= 0.0) {
            return Err(AdapterError::Shape {
                field: "sigma0".into(),
                expected: "positive variances".into(),
                found: format!("{:?}", self.sigma0),
            });
        }
        Ok(())
    }

    pub fn sigma0(&self) -> [f64; 3] {
        [self.sigma0[0], self.sigma0[1], self.sigma0[2]]
    }
}

/// Parse and validate a weight file.
pub fn load_weights(path: &Path) -> Result<AdapterWeights, AdapterError> {
    let text = std::fs::read_to_string(path)?;
    let w: AdapterWeights = serde_json::from_str(&text)?;
    w.validate()?;
    Ok(w)
}

/// Writes every float with 17 significant digits so a reload is bit-exact.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn save_weights(path: &Path, weights: &AdapterWeights) -> Result<(), AdapterError> {
    weights.validate()?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    weights.serialize(&mut ser)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

/// The last `capacity` IMU samples as 6-channel frames (gyro then accel).
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    capacity: usize,
    frames: VecDeque<[f64; CHANNELS]>,
}

impl WindowBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    /// Append a frame, evicting the oldest once full.
    pub fn push(&mut self, frame: [f64; CHANNELS]) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    /// Like [`push`](Self::push), but an empty buffer is first filled with
    /// copies of `frame`.
    pub fn push_prefilled(&mut self, frame: [f64; CHANNELS]) {
        if self.frames.is_empty() {
            self.frames
                .extend(std::iter::repeat_n(frame, self.capacity));
        } else {
            self.push(frame);
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64; CHANNELS]> {
        self.frames.iter()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }
}

/// Network output `z`, each component in `[-3, 3]`.
pub fn infer_z(window: &WindowBuffer, w: &AdapterWeights) -> Result<Vec3, AdapterError> {
    if !window.is_full() || window.capacity() < RECEPTIVE_FIELD {
        return Err(AdapterError::NotFull {
            len: window.len(),
            capacity: window.capacity(),
        });
    }
    let skip = window.len() - RECEPTIVE_FIELD;
    let x: Vec<[f64; CHANNELS]> = window
        .frames()
        .skip(skip)
        .map(|f| std::array::from_fn(|c| (f[c] - w.norm_mean[c]) / w.norm_std[c]))
        .collect();

    let len1 = RECEPTIVE_FIELD - (KERNEL1 - 1) * DILATION1;
    let mut h1 = vec![[0.0; HIDDEN]; len1];
    for (t, out) in h1.iter_mut().enumerate() {
        for (o, value) in out.iter_mut().enumerate() {
            let mut acc = w.conv1.bias[o];
            for (i, taps) in w.conv1.weight[o].iter().enumerate() {
                for (k, tap) in taps.iter().enumerate() {
                    acc += tap * x[t + k * DILATION1][i];
                }
            }
            *value = acc.max(0.0);
        }
    }

    // conv2 has exactly one output frame over h1
    let mut h2 = [0.0; HIDDEN];
    for (o, value) in h2.iter_mut().enumerate() {
        let mut acc = w.conv2.bias[o];
        for (i, taps) in w.conv2.weight[o].iter().enumerate() {
            for (k, tap) in taps.iter().enumerate() {
                acc += tap * h1[k * DILATION2][i];
            }
        }
        *value = acc.max(0.0);
    }

    let z = Vec3::from_fn(|j, _| {
        let pre = w.fc.bias[j]
            + w.fc.weight[j]
                .iter()
                .zip(&h2)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Z_SCALE * pre.tanh()
    });
    Ok(z)
}

/// `diag(sigma0_k * 10^z_k)`.
pub fn measurement_noise(z: &Vec3, sigma0: &[f64; 3]) -> Mat3 {
    Mat3::from_diagonal(&noise_diagonal(z, sigma0))
}

fn noise_diagonal(z: &Vec3, sigma0: &[f64; 3]) -> Vec3 {
    Vec3::from_fn(|k, _| sigma0[k] * 10f64.powf(z[k]))
}

/// Source of the per-step measurement covariance.
pub trait NoiseAdapter {
    /// Diagonal of the covariance to use with the observation at `imu.t_ns`.
    fn noise(&mut self, imu: &ImuSample) -> Vec3;
}

/// The same covariance every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAdapter {
    sigma0: Vec3,
}

impl ConstantAdapter {
    pub fn new(sigma0: [f64; 3]) -> Self {
        Self {
            sigma0: Vec3::from(sigma0),
        }
    }
}

impl Default for ConstantAdapter {
    fn default() -> Self {
        Self::new(DEFAULT_SIGMA0)
    }
}

impl NoiseAdapter for ConstantAdapter {
    fn noise(&mut self, _imu: &ImuSample) -> Vec3 {
        self.sigma0
    }
}

/// CNN adapter over a pre-filled sliding window.
#[derive(Debug, Clone)]
pub struct LearnedAdapter {
    weights: AdapterWeights,
    window: WindowBuffer,
}

impl LearnedAdapter {
    pub fn new(weights: AdapterWeights) -> Result<Self, AdapterError> {
        weights.validate()?;
        let window = WindowBuffer::new(weights.window);
        Ok(Self { weights, window })
    }

    pub fn weights(&self) -> &AdapterWeights {
        &self.weights
    }

    /// Push a sample and return `z` for the updated window.
    pub fn push_and_infer(&mut self, imu: &ImuSample) -> Vec3 {
        self.window.push_prefilled(imu.channels());
        infer_z(&self.window, &self.weights).expect("pre-filled window of a validated size")
    }
}

impl NoiseAdapter for LearnedAdapter {
    fn noise(&mut self, imu: &ImuSample) -> Vec3 {
        let z = self.push_and_infer(imu);
        noise_diagonal(&z, &self.weights.sigma0())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn full_window(frame: [f64; 6]) -> WindowBuffer {
        let mut b = WindowBuffer::new(RECEPTIVE_FIELD);
        b.push_prefilled(frame);
        b
    }

    fn pseudo_random_weights() -> AdapterWeights {
        let mut w = AdapterWeights::zeros();
        let mut s = 0.1f64;
        let mut next = || {
            s = (s * 997.0 + 0.123).fract();
            s - 0.5
        };
        for layer in [&mut w.conv1, &mut w.conv2] {
            for row in layer.weight.iter_mut() {
                for taps in row.iter_mut() {
                    taps.iter_mut().for_each(|x| *x = next() * 0.4);
                }
            }
            layer.bias.iter_mut().for_each(|x| *x = next() * 0.1);
        }
        for row in w.fc.weight.iter_mut() {
            row.iter_mut().for_each(|x| *x = next());
        }
        w
    }

    #[test]
    fn receptive_field_is_23() {
        assert_eq!(RECEPTIVE_FIELD, 23);
    }

    #[test]
    fn zero_network_gives_zero_z() {
        let z = infer_z(
            &full_window([0.3, -1.0, 2.0, 0.1, 0.0, 5.0]),
            &AdapterWeights::zeros(),
        )
        .unwrap();
        assert_eq!(z, Vec3::zeros());
    }

    #[test]
    fn saturated_bias() {
        let mut w = AdapterWeights::zeros();
        w.fc.bias = vec![100.0, -100.0, 0.0];
        let z = infer_z(&full_window([1.0; 6]), &w).unwrap();
        assert_eq!(z, Vec3::new(3.0, -3.0, 0.0));
    }

    #[test]
    fn not_full_is_an_error() {
        let mut b = WindowBuffer::new(RECEPTIVE_FIELD);
        b.push([0.0; 6]);
        assert!(matches!(
            infer_z(&b, &AdapterWeights::zeros()),
            Err(AdapterError::NotFull {
                len: 1,
                capacity: 23
            })
        ));
    }

    #[test]
    fn noise_from_z() {
        let s = DEFAULT_SIGMA0;
        assert_eq!(
            measurement_noise(&Vec3::zeros(), &s),
            Mat3::from_diagonal(&Vec3::new(3.0, 2.0, 0.2))
        );
        let n = measurement_noise(&Vec3::new(3.0, -3.0, 0.0), &s);
        assert_relative_eq!(
            n,
            Mat3::from_diagonal(&Vec3::new(3000.0, 0.002, 0.2)),
            max_relative = 1e-14
        );
        let n = measurement_noise(&Vec3::new(1.0, 1.0, 1.0), &s);
        assert_relative_eq!(
            n,
            Mat3::from_diagonal(&Vec3::new(30.0, 20.0, 2.0)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn constant_adapter_is_stateless() {
        let imu = ImuSample {
            t_ns: 0,
            gyro: Vec3::x(),
            accel: Vec3::y(),
        };
        let mut a = ConstantAdapter::default();
        let first = a.noise(&imu);
        assert_eq!(first, Vec3::new(3.0, 2.0, 0.2));
        assert!((0..1000).all(|_| a.noise(&imu) == first));
        assert_eq!(
            ConstantAdapter::new([1.0; 3]).noise(&imu),
            Vec3::repeat(1.0)
        );
    }

    #[test]
    fn constant_windows_of_equal_value_agree() {
        let w = pseudo_random_weights();
        let frame = [0.2, -0.1, 0.05, 0.4, 1.1, -0.3];
        let a = infer_z(&full_window(frame), &w).unwrap();
        let mut longer = WindowBuffer::new(40);
        longer.push_prefilled([9.0; 6]);
        for _ in 0..40 {
            longer.push(frame);
        }
        let mut w40 = w.clone();
        w40.window = 40;
        assert_eq!(
            infer_z(&longer, &w40).unwrap().map(f64::to_bits),
            a.map(f64::to_bits)
        );
    }

    #[test]
    fn validation_errors_are_distinct() {
        let mut w = AdapterWeights::zeros();
        w.conv1.weight[0][0] = vec![0.0; 5];
        assert!(matches!(w.validate(), Err(AdapterError::Shape { .. })));
        let mut w = AdapterWeights::zeros();
        w.norm_std[3] = 0.0;
        assert!(matches!(
            w.validate(),
            Err(AdapterError::NonPositiveStd { index: 3, .. })
        ));
        let mut w = AdapterWeights::zeros();
        w.format_version = 2;
        assert!(matches!(
            w.validate(),
            Err(AdapterError::UnknownVersion { found: 2 })
        ));
        let mut w = AdapterWeights::zeros();
        w.window = 20;
        assert!(matches!(w.validate(), Err(AdapterError::Shape { .. })));
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut w = pseudo_random_weights();
        w.norm_mean[2] = std::f64::consts::PI;
        w.norm_std[0] = 1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&path, &w).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }
}
