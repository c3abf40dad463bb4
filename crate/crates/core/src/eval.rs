//! Trajectory metrics and the two reference baselines.
//!
//! ATE is the plain position RMSE over the whole sequence, with no rigid
//! alignment: all methods start from the same initial pose. RTE splits the
//! sequence into disjoint windows of a fixed duration, shifts the estimate
//! so it coincides with the ground truth at each window start (position
//! only, heading is left alone), and averages the per-window RMSE.

use crate::adapter::ConstantAdapter;
use crate::dataset::ImuSample;
use crate::geometry::{rotation_from_wxyz, wxyz_from_rotation, Rotation, Vec3};
use crate::iekf::{
    run_sequence_with, FilterConfig, FilterError, FilterOutput, InitialCondition, ObservationMode,
};
use crate::sim::GroundTruthSample;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const TRAJECTORY_HEADER: [&str; 11] = [
    "t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectories have {est} and {gt} samples")]
    LengthMismatch { est: usize, gt: usize },
    #[error("timestamps differ at index {index}: {est} vs {gt}")]
    TimestampMismatch { index: usize, est: i64, gt: i64 },
    #[error("timestamps are not strictly increasing at index {index}")]
    NonMonotone { index: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t_ns: i64,
    pub position: Vec3,
    pub orientation: Option<Rotation>,
    pub velocity: Option<Vec3>,
}

impl TrajectorySample {
    pub fn at(t_ns: i64, position: Vec3) -> Self {
        Self {
            t_ns,
            position,
            orientation: None,
            velocity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, EvalError> {
        if let Some(i) = samples.windows(2).position(|w| w[1].t_ns <= w[0].t_ns) {
            return Err(EvalError::NonMonotone { index: i + 1 });
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => (b.t_ns - a.t_ns) as f64 * 1e-9,
            _ => 0.0,
        }
    }

    pub fn from_ground_truth(gt: &[GroundTruthSample]) -> Self {
        let samples = gt
            .iter()
            .map(|g| TrajectorySample {
                t_ns: g.t_ns,
                position: g.position,
                orientation: Some(g.orientation),
                velocity: Some(g.velocity),
            })
            .collect();
        Self { samples }
    }

    /// The filter's position state (IMU orientation, world velocity).
    pub fn from_outputs(out: &[FilterOutput]) -> Self {
        let samples = out
            .iter()
            .map(|o| TrajectorySample {
                t_ns: o.t_ns,
                position: o.state.position,
                orientation: Some(o.state.rotation),
                velocity: Some(o.state.velocity),
            })
            .collect();
        Self { samples }
    }

    fn check_same_grid(&self, gt: &Trajectory) -> Result<(), EvalError> {
        if self.is_empty() || gt.is_empty() {
            return Err(EvalError::Empty);
        }
        if self.len() != gt.len() {
            return Err(EvalError::LengthMismatch {
                est: self.len(),
                gt: gt.len(),
            });
        }
        for (index, (a, b)) in self.samples.iter().zip(&gt.samples).enumerate() {
            if a.t_ns != b.t_ns {
                return Err(EvalError::TimestampMismatch {
                    index,
                    est: a.t_ns,
                    gt: b.t_ns,
                });
            }
        }
        Ok(())
    }
}

fn rmse(errors: impl Iterator<Item = Vec3>) -> f64 {
    let (sum, n) = errors.fold((0.0, 0usize), |(s, n), e| (s + e.norm_squared(), n + 1));
    (sum / n as f64).sqrt()
}

/// Position RMSE over all samples.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    est.check_same_grid(gt)?;
    Ok(rmse(
        est.samples
            .iter()
            .zip(&gt.samples)
            .map(|(a, b)| a.position - b.position),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rte {
    pub value: f64,
    /// Complete windows used; zero when the sequence was too short.
    pub windows: usize,
    /// The sequence is shorter than one window and `value` is the ATE.
    pub fell_back: bool,
}

/// Samples per window: the interval divided by the median sample spacing.
fn window_len(t: &[i64], interval_s: f64) -> usize {
    if t.len() < 2 {
        return usize::MAX;
    }
    let mut d: Vec<i64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_unstable();
    let step = d[d.len() / 2] as f64 * 1e-9;
    ((interval_s / step).round() as usize).max(1)
}

/// Windowed RMSE with per-window position re-anchoring. A trailing partial
/// window is dropped.
pub fn rte(est: &Trajectory, gt: &Trajectory, interval_s: f64) -> Result<Rte, EvalError> {
    est.check_same_grid(gt)?;
    let t: Vec<i64> = gt.samples.iter().map(|s| s.t_ns).collect();
    let n = window_len(&t, interval_s);
    if n > t.len() {
        return Ok(Rte {
            value: ate(est, gt)?,
            windows: 0,
            fell_back: true,
        });
    }
    let per_window: Vec<f64> = est
        .samples
        .chunks_exact(n)
        .zip(gt.samples.chunks_exact(n))
        .map(|(e, g)| {
            let offset = e[0].position - g[0].position;
            rmse(
                e.iter()
                    .zip(g)
                    .map(|(a, b)| a.position - offset - b.position),
            )
        })
        .collect();
    let windows = per_window.len();
    Ok(Rte {
        value: per_window.iter().sum::<f64>() / windows as f64,
        windows,
        fell_back: false,
    })
}

/// Strapdown integration of the raw readings from the initial condition,
/// with zero biases and no measurement updates.
pub fn ndi_baseline(
    imu: &[ImuSample],
    init: &InitialCondition,
    cfg: &FilterConfig,
) -> Result<Trajectory, EvalError> {
    if imu.is_empty() {
        return Ok(Trajectory {
            samples: vec![TrajectorySample {
                t_ns: init.pose.t_ns,
                position: init.pose.position,
                orientation: Some(init.pose.orientation),
                velocity: Some(init.velocity),
            }],
        });
    }
    let cfg = cfg.with_mode(ObservationMode::None);
    let mut samples = Vec::with_capacity(imu.len());
    run_sequence_with(
        imu,
        init,
        &cfg,
        &mut ConstantAdapter::new(cfg.measurement.sigma0),
        |o| {
            samples.push(TrajectorySample {
                t_ns: o.t_ns,
                position: o.state.position,
                orientation: Some(o.state.rotation),
                velocity: Some(o.state.velocity),
            })
        },
    )?;
    Ok(Trajectory { samples })
}

/// Position obtained by integrating the filter's velocity estimate:
/// `p_k = p_{k-1} + v_{k-1} (t_k - t_{k-1})`.
pub fn inter_trajectory(out: &[FilterOutput], p0: &Vec3) -> Trajectory {
    let mut p = *p0;
    let mut samples = Vec::with_capacity(out.len());
    for (k, o) in out.iter().enumerate() {
        if k > 0 {
            let prev = &out[k - 1];
            p += prev.state.velocity * ((o.t_ns - prev.t_ns) as f64 * 1e-9);
        }
        samples.push(TrajectorySample {
            t_ns: o.t_ns,
            position: p,
            orientation: Some(o.state.rotation),
            velocity: Some(o.state.velocity),
        });
    }
    Trajectory { samples }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub ate: f64,
    pub rte: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MethodMetrics>,
    pub interval_s: f64,
    /// At least one RTE fell back to ATE because the sequence was short.
    pub rte_fallback: bool,
}

/// How RTE windows are re-anchored.
pub const RTE_ANCHORING: &str = "position-only";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,ate_m,rte_m,duration_s,rte_interval_s,rte_fallback,rte_anchoring\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.3},{},{},{}",
                r.method,
                r.ate,
                r.rte,
                r.duration_s,
                self.interval_s,
                self.rte_fallback,
                RTE_ANCHORING
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!(
            "{:<width$}  {:>10}  {:>10}  {:>10}\n",
            "method", "ATE [m]", "RTE [m]", "dur [s]"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>10.3}  {:>10.3}  {:>10.1}",
                r.method, r.ate, r.rte, r.duration_s
            );
        }
        let _ = writeln!(
            s,
            "RTE interval {} s, {} re-anchoring",
            self.interval_s, RTE_ANCHORING
        );
        if self.rte_fallback {
            let _ = writeln!(
                s,
                "warning: sequence shorter than the RTE interval, RTE reports ATE"
            );
        }
        s
    }
}

/// Metrics for each method against `gt`, in the given order.
pub fn compare(
    methods: &[(String, Trajectory)],
    gt: &Trajectory,
    interval_s: f64,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::with_capacity(methods.len());
    let mut rte_fallback = false;
    for (name, traj) in methods {
        let r = rte(traj, gt, interval_s)?;
        rte_fallback |= r.fell_back;
        rows.push(MethodMetrics {
            method: name.clone(),
            ate: ate(traj, gt)?,
            rte: r.value,
            duration_s: gt.duration_s(),
        });
    }
    Ok(EvalReport {
        rows,
        interval_s,
        rte_fallback,
    })
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for s in &traj.samples {
        let mut rec = vec![s.t_ns.to_string()];
        rec.extend(s.position.iter().map(|x| fmt(*x)));
        match s.orientation {
            Some(r) => rec.extend(wxyz_from_rotation(&r).iter().map(|x| fmt(*x))),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        match s.velocity {
            Some(v) => rec.extend(v.iter().map(|x| fmt(*x))),
            None => rec.extend(std::iter::repeat_n(String::new(), 3)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the trajectory schema. Orientation and velocity columns may be
/// absent or empty.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, EvalError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| EvalError::Parse {
            row: 0,
            message: format!("missing column {name}"),
        })
    };
    let t_col = required("t_ns")?;
    let p_cols = [required("px")?, required("py")?, required("pz")?];
    let q_cols: Option<Vec<usize>> = ["qw", "qx", "qy", "qz"].iter().map(|c| col(c)).collect();
    let v_cols: Option<Vec<usize>> = ["vx", "vy", "vz"].iter().map(|c| col(c)).collect();

    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |c: usize| -> Result<Option<f64>, EvalError> {
            let f = rec.get(c).unwrap_or("");
            if f.is_empty() {
                return Ok(None);
            }
            f.parse::<f64>().map(Some).map_err(|_| EvalError::Parse {
                row,
                message: format!("bad value {f:?} in {}", &headers[c]),
            })
        };
        let need = |c: usize| {
            num(c)?.ok_or_else(|| EvalError::Parse {
                row,
                message: format!("empty {}", &headers[c]),
            })
        };
        let t_ns = rec
            .get(t_col)
            .unwrap_or("")
            .parse::<i64>()
            .map_err(|_| EvalError::Parse {
                row,
                message: "bad t_ns".into(),
            })?;
        let position = Vec3::new(need(p_cols[0])?, need(p_cols[1])?, need(p_cols[2])?);
        let orientation = match &q_cols {
            Some(c) => {
                let q: Vec<Option<f64>> = c.iter().map(|&c| num(c)).collect::<Result<_, _>>()?;
                match (q[0], q[1], q[2], q[3]) {
                    (Some(w), Some(x), Some(y), Some(z)) => Some(rotation_from_wxyz([w, x, y, z])),
                    _ => None,
                }
            }
            None => None,
        };
        let velocity = match &v_cols {
            Some(c) => match (num(c[0])?, num(c[1])?, num(c[2])?) {
                (Some(x), Some(y), Some(z)) => Some(Vec3::new(x, y, z)),
                _ => None,
            },
            None => None,
        };
        samples.push(TrajectorySample {
            t_ns,
            position,
            orientation,
            velocity,
        });
    }
    Trajectory::new(samples)
}
