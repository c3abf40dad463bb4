//! Recorded sequences: loading, synchronization and velocity labels.
//!
//! Canonical files (headers required):
//!
//! - IMU: `t_ns,wx,wy,wz,ax,ay,az` (gyro rad/s, gravity-free acceleration m/s²)
//! - pose: `t_ns,px,py,pz,qw,qx,qy,qz` (Hamilton quaternion, IMU to world)
//!
//! RIDI-style files carry both streams in one table. The columns used are
//! `time` (ns), `gyro_{x,y,z}`, `linacce_{x,y,z}`, `pos_{x,y,z}` and
//! `ori_{w,x,y,z}`; everything else is ignored.

use crate::geometry::{rotation_from_wxyz, wxyz_from_rotation, Vec3};
use crate::sim::GroundTruthSample;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Frames used for the central-difference velocity (must be odd).
pub const VELOCITY_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: cannot parse {value:?}")]
    BadValue {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: timestamps are not strictly increasing at t_ns = {t_ns}")]
    NonMonotone { path: PathBuf, t_ns: i64 },
    #[error("{path}: quaternion at t_ns = {t_ns} is not unit length (norm {norm})")]
    NotUnit { path: PathBuf, t_ns: i64, norm: f64 },
    #[error("IMU and pose streams do not overlap in time")]
    EmptyOverlap,
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t_ns: i64,
    /// Angular rate in the IMU frame, rad/s.
    pub gyro: Vec3,
    /// Gravity-free linear acceleration in the IMU frame, m/s².
    pub accel: Vec3,
}

impl ImuSample {
    /// Channels in weight-file order: gyro xyz, then accel xyz.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.gyro.x,
            self.gyro.y,
            self.gyro.z,
            self.accel.x,
            self.accel.y,
            self.accel.z,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub t_ns: i64,
    pub position: Vec3,
    /// `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Canonical,
    Ridi,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "canonical" => Ok(Format::Canonical),
            "ridi" => Ok(Format::Ridi),
            other => Err(format!(
                "unknown format `{other}` (expected canonical or ridi)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedFrame {
    pub imu: ImuSample,
    /// Pose with central-difference world velocity.
    pub gt: GroundTruthSample,
    /// Velocity in the ideal body frame.
    pub body_velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedMetadata {
    pub rate_hz: f64,
    pub velocity_window: usize,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub frames: Vec<AlignedFrame>,
    pub meta: AlignedMetadata,
}

impl AlignedSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn imu(&self) -> Vec<ImuSample> {
        self.frames.iter().map(|f| f.imu).collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthSample> {
        self.frames.iter().map(|f| f.gt).collect()
    }

    pub fn poses(&self) -> Vec<PoseRecord> {
        self.frames
            .iter()
            .map(|f| PoseRecord {
                t_ns: f.gt.t_ns,
                position: f.gt.position,
                orientation: wxyz_from_rotation(&f.gt.orientation),
            })
            .collect()
    }

    /// Wrap simulator output, keeping its exact velocities.
    pub fn from_simulation(gt: &[GroundTruthSample], imu: &[ImuSample]) -> Self {
        let frames: Vec<AlignedFrame> = gt
            .iter()
            .zip(imu)
            .map(|(g, i)| AlignedFrame {
                imu: *i,
                gt: *g,
                body_velocity: body_velocity(&g.velocity),
            })
            .collect();
        let rate_hz = rate_of(&frames.iter().map(|f| f.gt.t_ns).collect::<Vec<_>>());
        AlignedSequence {
            frames,
            meta: AlignedMetadata {
                rate_hz,
                velocity_window: 1,
                sources: vec!["simulation".into()],
            },
        }
    }
}

fn rate_of(ts: &[i64]) -> f64 {
    if ts.len() < 2 {
        return 0.0;
    }
    let span = (ts[ts.len() - 1] - ts[0]) as f64 * 1e-9;
    (ts.len() - 1) as f64 / span
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: path.into(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let csv_err = |source| DatasetError::Csv {
            path: path.into(),
            source,
        };
        let headers = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Table {
            path: path.into(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: self.path.clone(),
                column: name.into(),
            })
    }

    fn bad(&self, row: usize, col: usize, value: &str) -> DatasetError {
        DatasetError::BadValue {
            path: self.path.clone(),
            // 1-based data row, header excluded
            row: row + 1,
            column: self.headers[col].clone(),
            value: value.into(),
        }
    }

    fn float(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.rows[row].get(col).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.bad(row, col, raw))
    }

    fn time(&self, row: usize, col: usize) -> Result<i64> {
        let raw = self.rows[row].get(col).unwrap_or("");
        if let Ok(v) = raw.parse::<i64>() {
            return Ok(v);
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v.round() as i64),
            _ => Err(self.bad(row, col, raw)),
        }
    }

    fn vec3(&self, row: usize, cols: &[usize; 3]) -> Result<Vec3> {
        Ok(Vec3::new(
            self.float(row, cols[0])?,
            self.float(row, cols[1])?,
            self.float(row, cols[2])?,
        ))
    }
}

struct Columns {
    time: &'static str,
    gyro: [&'static str; 3],
    accel: [&'static str; 3],
    pos: [&'static str; 3],
    quat: [&'static str; 4],
}

const CANONICAL: Columns = Columns {
    time: "t_ns",
    gyro: ["wx", "wy", "wz"],
    accel: ["ax", "ay", "az"],
    pos: ["px", "py", "pz"],
    quat: ["qw", "qx", "qy", "qz"],
};

const RIDI: Columns = Columns {
    time: "time",
    gyro: ["gyro_x", "gyro_y", "gyro_z"],
    accel: ["linacce_x", "linacce_y", "linacce_z"],
    pos: ["pos_x", "pos_y", "pos_z"],
    quat: ["ori_w", "ori_x", "ori_y", "ori_z"],
};

fn cols3(t: &Table, names: &[&str; 3]) -> Result<[usize; 3]> {
    Ok([
        t.column(names[0])?,
        t.column(names[1])?,
        t.column(names[2])?,
    ])
}

fn sort_checked<T>(path: &Path, mut items: Vec<T>, t: impl Fn(&T) -> i64) -> Result<Vec<T>> {
    items.sort_by_key(&t);
    if let Some(w) = items.windows(2).find(|w| t(&w[1]) <= t(&w[0])) {
        return Err(DatasetError::NonMonotone {
            path: path.into(),
            t_ns: t(&w[1]),
        });
    }
    Ok(items)
}

pub fn load_imu(path: &Path, format: Format) -> Result<Vec<ImuSample>> {
    let c = if format == Format::Ridi {
        &RIDI
    } else {
        &CANONICAL
    };
    let t = Table::read(path)?;
    let (tc, gc, ac) = (t.column(c.time)?, cols3(&t, &c.gyro)?, cols3(&t, &c.accel)?);
    let samples = (0..t.rows.len())
        .map(|r| {
            Ok(ImuSample {
                t_ns: t.time(r, tc)?,
                gyro: t.vec3(r, &gc)?,
                accel: t.vec3(r, &ac)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_checked(path, samples, |s| s.t_ns)
}

pub fn load_poses(path: &Path, format: Format) -> Result<Vec<PoseRecord>> {
    let c = if format == Format::Ridi {
        &RIDI
    } else {
        &CANONICAL
    };
    let t = Table::read(path)?;
    let tc = t.column(c.time)?;
    let pc = cols3(&t, &c.pos)?;
    let qc = [
        t.column(c.quat[0])?,
        t.column(c.quat[1])?,
        t.column(c.quat[2])?,
        t.column(c.quat[3])?,
    ];
    let mut poses = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let q = [
            t.float(r, qc[0])?,
            t.float(r, qc[1])?,
            t.float(r, qc[2])?,
            t.float(r, qc[3])?,
        ];
        let t_ns = t.time(r, tc)?;
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() >= 1e-6 {
            return Err(DatasetError::NotUnit {
                path: path.into(),
                t_ns,
                norm,
            });
        }
        poses.push(PoseRecord {
            t_ns,
            position: t.vec3(r, &pc)?,
            orientation: q,
        });
    }
    sort_checked(path, poses, |p| p.t_ns)
}

/// Load both streams. RIDI files usually hold both in one table, in which
/// case the same path may be passed twice.
pub fn load_sequence(
    imu_path: &Path,
    pose_path: &Path,
    format: Format,
) -> Result<(Vec<ImuSample>, Vec<PoseRecord>)> {
    Ok((load_imu(imu_path, format)?, load_poses(pose_path, format)?))
}

fn lerp(a: &Vec3, b: &Vec3, f: f64) -> Vec3 {
    a + (b - a) * f
}

/// Locate `t` in a sorted time series: index `i` and fraction `f` so that
/// the value is `x[i] + f (x[i+1] - x[i])`. `f == 0` on exact hits.
fn bracket(ts: &[i64], t: i64) -> (usize, f64) {
    match ts.binary_search(&t) {
        Ok(i) => (i, 0.0),
        Err(i) => {
            let lo = i - 1;
            (lo, (t - ts[lo]) as f64 / (ts[lo + 1] - ts[lo]) as f64)
        }
    }
}

fn nlerp(a: &[f64; 4], b: &[f64; 4], f: f64) -> [f64; 4] {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    let mut q = [0.0; 4];
    for k in 0..4 {
        q[k] = a[k] + (s * b[k] - a[k]) * f;
    }
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.map(|x| x / n)
}

/// Resample both streams onto a uniform grid at the pose rate.
///
/// The grid starts at the first pose inside the overlap of the two streams and
/// steps by the median pose interval. Nothing is extrapolated. IMU channels and
/// positions are interpolated linearly, orientations by normalized lerp.
pub fn synchronize(imu: &[ImuSample], poses: &[PoseRecord]) -> Result<AlignedSequence> {
    if imu.is_empty() || poses.is_empty() {
        return Err(DatasetError::EmptyOverlap);
    }
    let lo = imu[0].t_ns.max(poses[0].t_ns);
    let hi = imu[imu.len() - 1].t_ns.min(poses[poses.len() - 1].t_ns);
    let inside: Vec<&PoseRecord> = poses
        .iter()
        .filter(|p| p.t_ns >= lo && p.t_ns <= hi)
        .collect();
    if lo > hi || inside.is_empty() {
        return Err(DatasetError::EmptyOverlap);
    }
    let start = inside[0].t_ns;
    let end = inside[inside.len() - 1].t_ns;
    let step = if inside.len() > 1 {
        let mut gaps: Vec<i64> = inside.windows(2).map(|w| w[1].t_ns - w[0].t_ns).collect();
        gaps.sort_unstable();
        gaps[gaps.len() / 2]
    } else {
        1
    };
    let grid: Vec<i64> = (0..)
        .map(|k| start + k * step)
        .take_while(|t| *t <= end)
        .collect();

    let imu_t: Vec<i64> = imu.iter().map(|s| s.t_ns).collect();
    let pose_t: Vec<i64> = poses.iter().map(|p| p.t_ns).collect();
    let mut positions = Vec::with_capacity(grid.len());
    let mut frames = Vec::with_capacity(grid.len());
    for &t in &grid {
        let (i, f) = bracket(&imu_t, t);
        let s = if f == 0.0 {
            ImuSample { t_ns: t, ..imu[i] }
        } else {
            ImuSample {
                t_ns: t,
                gyro: lerp(&imu[i].gyro, &imu[i + 1].gyro, f),
                accel: lerp(&imu[i].accel, &imu[i + 1].accel, f),
            }
        };
        let (j, g) = bracket(&pose_t, t);
        let (p, q) = if g == 0.0 {
            (poses[j].position, poses[j].orientation)
        } else {
            (
                lerp(&poses[j].position, &poses[j + 1].position, g),
                nlerp(&poses[j].orientation, &poses[j + 1].orientation, g),
            )
        };
        positions.push(p);
        frames.push(AlignedFrame {
            imu: s,
            gt: GroundTruthSample {
                t_ns: t,
                position: p,
                orientation: rotation_from_wxyz(q),
                velocity: Vec3::zeros(),
            },
            body_velocity: Vec3::zeros(),
        });
    }
    let velocities = central_velocity(&grid, &positions, VELOCITY_WINDOW);
    for (f, v) in frames.iter_mut().zip(velocities) {
        f.gt.velocity = v;
        f.body_velocity = body_velocity(&v);
    }
    let rate_hz = if grid.len() > 1 {
        1e9 / step as f64
    } else {
        0.0
    };
    Ok(AlignedSequence {
        frames,
        meta: AlignedMetadata {
            rate_hz,
            velocity_window: VELOCITY_WINDOW,
            sources: vec![],
        },
    })
}

/// Velocity from positions over a centered window, shrinking at the ends.
pub fn central_velocity(ts: &[i64], positions: &[Vec3], window: usize) -> Vec<Vec3> {
    let n = positions.len();
    let half = window / 2;
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(half), (k + half).min(n.saturating_sub(1)));
            if a == b {
                Vec3::zeros()
            } else {
                (positions[b] - positions[a]) / ((ts[b] - ts[a]) as f64 * 1e-9)
            }
        })
        .collect()
}

/// `R_b^T v` with `R_b` the heading rotation of `v`: `[|v_xy|, 0, v_z]`.
pub fn body_velocity(v: &Vec3) -> Vec3 {
    Vec3::new(v.x.hypot(v.y), 0.0, v.z)
}

/// Ground-truth velocity in the ideal body frame, one per frame.
pub fn body_velocity_labels(seq: &AlignedSequence) -> Vec<Vec3> {
    seq.frames
        .iter()
        .map(|f| body_velocity(&f.gt.velocity))
        .collect()
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.into(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, w: csv::Writer<File>) -> Result<()> {
    w.into_inner()
        .map_err(|e| DatasetError::Io {
            path: path.into(),
            source: e.into_error(),
        })?
        .flush()
        .map_err(|source| DatasetError::Io {
            path: path.into(),
            source,
        })
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = create(path)?;
    let csv_err = |source| DatasetError::Csv {
        path: path.into(),
        source,
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(path, w)
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<()> {
    write_rows(
        path,
        &["t_ns", "wx", "wy", "wz", "ax", "ay", "az"],
        imu.iter().map(|s| {
            let mut row = vec![s.t_ns.to_string()];
            row.extend(s.channels().iter().map(|x| fmt(*x)));
            row
        }),
    )
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> Result<()> {
    write_rows(
        path,
        &["t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"],
        poses.iter().map(|p| {
            let mut row = vec![p.t_ns.to_string()];
            row.extend(
                p.position
                    .iter()
                    .chain(p.orientation.iter())
                    .map(|x| fmt(*x)),
            );
            row
        }),
    )
}

/// One CSV with every column plus a `<path>.meta.json` sidecar.
pub fn write_aligned(path: &Path, seq: &AlignedSequence) -> Result<()> {
    let header = [
        "t_ns", "wx", "wy", "wz", "ax", "ay", "az", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx",
        "vy", "vz", "vbx", "vby", "vbz",
    ];
    write_rows(
        path,
        &header,
        seq.frames.iter().map(|f| {
            let q = wxyz_from_rotation(&f.gt.orientation);
            let mut row = vec![f.gt.t_ns.to_string()];
            let nums = f
                .imu
                .channels()
                .into_iter()
                .chain(f.gt.position.iter().copied())
                .chain(q);
            row.extend(
                nums.chain(f.gt.velocity.iter().copied())
                    .chain(f.body_velocity.iter().copied())
                    .map(fmt),
            );
            row
        }),
    )?;
    let meta_path = sidecar_path(path);
    let file = File::create(&meta_path).map_err(|source| DatasetError::Io {
        path: meta_path.clone(),
        source,
    })?;
    serde_json::to_writer_pretty(file, &seq.meta)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_aligned(path: &Path) -> Result<AlignedSequence> {
    let t = Table::read(path)?;
    let tc = t.column("t_ns")?;
    let cols = |names: [&str; 3]| cols3(&t, &names);
    let (g, a, p) = (
        cols(["wx", "wy", "wz"])?,
        cols(["ax", "ay", "az"])?,
        cols(["px", "py", "pz"])?,
    );
    let (v, vb) = (cols(["vx", "vy", "vz"])?, cols(["vbx", "vby", "vbz"])?);
    let qc = [
        t.column("qw")?,
        t.column("qx")?,
        t.column("qy")?,
        t.column("qz")?,
    ];
    let mut frames = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let t_ns = t.time(r, tc)?;
        let q = [
            t.float(r, qc[0])?,
            t.float(r, qc[1])?,
            t.float(r, qc[2])?,
            t.float(r, qc[3])?,
        ];
        frames.push(AlignedFrame {
            imu: ImuSample {
                t_ns,
                gyro: t.vec3(r, &g)?,
                accel: t.vec3(r, &a)?,
            },
            gt: GroundTruthSample {
                t_ns,
                position: t.vec3(r, &p)?,
                orientation: rotation_from_wxyz(q),
                velocity: t.vec3(r, &v)?,
            },
            body_velocity: t.vec3(r, &vb)?,
        });
    }
    let frames = sort_checked(path, frames, |f| f.gt.t_ns)?;
    let meta_path = sidecar_path(path);
    let meta = match File::open(&meta_path) {
        Ok(f) => serde_json::from_reader(f)?,
        Err(_) => AlignedMetadata {
            rate_hz: rate_of(&frames.iter().map(|f| f.gt.t_ns).collect::<Vec<_>>()),
            velocity_window: VELOCITY_WINDOW,
            sources: vec![path.display().to_string()],
        },
    };
    Ok(AlignedSequence { frames, meta })
}
