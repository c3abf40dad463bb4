use super::measurement::{build_pseudo_measurement, update, PositionHistory, PseudoObservation};
use super::propagation::{predict_covariance, propagate};
use super::state::{init_state, FilterState, StateCovariance};
use super::{FilterConfig, FilterError, ObservationMode, REPROJECT_EVERY};
use crate::adapter::NoiseAdapter;
use crate::dataset::ImuSample;
use crate::geometry::Vec3;
use crate::sim::GroundTruthSample;

const MAX_DT: f64 = 0.1;

/// Pose and world velocity at the first IMU timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub pose: GroundTruthSample,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub t_ns: i64,
    pub state: FilterState,
    pub covariance: StateCovariance,
}

/// A running filter instance.
#[derive(Debug, Clone)]
pub struct Iekf {
    cfg: FilterConfig,
    state: FilterState,
    covariance: StateCovariance,
    history: PositionHistory,
    /// Sum of the propagation increments `v dt`; updates do not move it.
    track: Vec3,
    v0: Vec3,
    last: Option<ImuSample>,
    steps: usize,
}

impl Iekf {
    pub fn new(init: &InitialCondition, cfg: &FilterConfig) -> Result<Self, FilterError> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            state: init_state(&init.pose, &init.velocity),
            covariance: cfg.initial_covariance.matrix(),
            history: PositionHistory::new(cfg.measurement.window_s),
            track: init.pose.position,
            v0: init.velocity,
            last: None,
            steps: 0,
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn covariance(&self) -> &StateCovariance {
        &self.covariance
    }

    /// Advance to `imu.t_ns` and apply the pseudo-measurement with the given
    /// noise variances.
    ///
    /// The first call only updates the initial state; later calls first
    /// propagate with the previous sample over the gap between the two. The
    /// forward speed is averaged over the dead-reckoned track rather than the
    /// corrected positions.
    pub fn step(&mut self, imu: &ImuSample, noise: Vec3) -> Result<FilterOutput, FilterError> {
        let t_ns = imu.t_ns;
        let diverged = |e: FilterError| match e {
            FilterError::BadTimestep { .. } | FilterError::Config(_) => e,
            other => FilterError::Diverged {
                t_ns,
                reason: other.to_string(),
            },
        };
        if let Some(prev) = self.last {
            let dt = (t_ns - prev.t_ns) as f64 * 1e-9;
            if !(dt > 0.0 && dt <= MAX_DT) {
                return Err(FilterError::BadTimestep { t_ns, dt });
            }
            self.covariance = predict_covariance(
                &self.state,
                &prev,
                &self.covariance,
                &self.cfg.process_noise,
                dt,
            )
            .map_err(diverged)?;
            self.track += self.state.velocity * dt;
            self.state = propagate(&self.state, &prev, dt);
            self.steps += 1;
            if self.steps.is_multiple_of(REPROJECT_EVERY) {
                self.state.reproject().map_err(|e| FilterError::Diverged {
                    t_ns,
                    reason: e.to_string(),
                })?;
            }
        }
        let m = &self.cfg.measurement;
        if m.mode != ObservationMode::None {
            let y = build_pseudo_measurement(&self.history, &self.track, t_ns, &self.v0, m);
            let obs = PseudoObservation { y, noise };
            let (s, p) = update(&self.state, &self.covariance, &obs, m.mode).map_err(diverged)?;
            self.state = s;
            self.covariance = p;
        }
        self.history.push(t_ns, self.track);
        self.last = Some(*imu);
        if !self.state.is_finite() || self.covariance.iter().any(|x| !x.is_finite()) {
            return Err(FilterError::Diverged {
                t_ns,
                reason: "non-finite state or covariance".into(),
            });
        }
        Ok(FilterOutput {
            t_ns,
            state: self.state,
            covariance: self.covariance,
        })
    }
}

/// Run the filter over a stream, handing each output to `sink`.
pub fn run_sequence_with(
    imu: &[ImuSample],
    init: &InitialCondition,
    cfg: &FilterConfig,
    adapter: &mut dyn NoiseAdapter,
    mut sink: impl FnMut(&FilterOutput),
) -> Result<(), FilterError> {
    let mut filter = Iekf::new(init, cfg)?;
    for sample in imu {
        let noise = adapter.noise(sample);
        sink(&filter.step(sample, noise)?);
    }
    Ok(())
}

/// One output per input sample, in order.
pub fn run_sequence(
    imu: &[ImuSample],
    init: &InitialCondition,
    cfg: &FilterConfig,
    adapter: &mut dyn NoiseAdapter,
) -> Result<Vec<FilterOutput>, FilterError> {
    let mut out = Vec::with_capacity(imu.len());
    run_sequence_with(imu, init, cfg, adapter, |o| out.push(*o))?;
    Ok(out)
}
