//! Sampled simulation of an attacked platoon.
//!
//! The whole chain (lead vehicle plus every follower with its own realized
//! controller) is one LTI system driven by piecewise-constant inputs, so a
//! single exact ZOH discretization reproduces it without integration error.
//!
//! Stacked state: `[v_1, a_1, (e_i, ė_i, z_i, ρ̄_i) for i = 2..m]`.
//! Stacked input: `[u_1, δ_2 (6 channels), …, δ_m]`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{self, DiscreteSystem};
use crate::model::PlatoonParams;
use crate::reach::AttackBounds;
use crate::realize::{PlatoonModel, Realization, RealizedController, CHANNELS};

pub const CSV_HEADER: &str = "k,t,vehicle,d,v,a,e,u";

const LEAD_STATES: usize = 2;
const FOLLOWER_STATES: usize = 4;

/// Lead acceleration command sampled at the platoon's `Ts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadProfile {
    pub samples: Vec<f64>,
    pub v0: f64,
}

impl LeadProfile {
    pub fn constant_speed(v0: f64, horizon: usize) -> Self {
        Self {
            samples: vec![0.0; horizon],
            v0,
        }
    }

    /// Piecewise-constant command: `segments` lists `(start time, value)` and
    /// each value holds until the next start. Zero before the first segment.
    pub fn piecewise(v0: f64, ts: f64, horizon: usize, segments: &[(f64, f64)]) -> Self {
        let samples = (0..horizon)
            .map(|k| {
                let t = k as f64 * ts;
                segments
                    .iter()
                    .rfind(|(start, _)| *start <= t + 1e-9 * ts)
                    .map_or(0.0, |(_, u)| *u)
            })
            .collect();
        Self { samples, v0 }
    }

    /// Accelerate, cruise, brake, cruise: `±amplitude` for `duration` seconds
    /// each, starting at `t0`.
    pub fn maneuver(v0: f64, ts: f64, horizon: usize, t0: f64, duration: f64, amplitude: f64) -> Self {
        Self::piecewise(
            v0,
            ts,
            horizon,
            &[
                (t0, amplitude),
                (t0 + duration, 0.0),
                (t0 + 3.0 * duration, -amplitude),
                (t0 + 4.0 * duration, 0.0),
            ],
        )
    }
}

/// Shape of one attack channel; samples are always clipped to `[−W, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSignal {
    #[default]
    Zero,
    Constant {
        amplitude: f64,
    },
    Sine {
        amplitude: f64,
        /// [Hz]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Uniform {
        amplitude: f64,
    },
    Bangbang {
        amplitude: f64,
        /// Per-step probability of flipping sign.
        switch_prob: f64,
    },
}

impl AttackSignal {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("attack {name} must be finite")))
            }
        };
        match *self {
            AttackSignal::Zero => Ok(()),
            AttackSignal::Constant { amplitude } | AttackSignal::Uniform { amplitude } => {
                finite("amplitude", amplitude)
            }
            AttackSignal::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                finite("amplitude", amplitude)?;
                finite("frequency", frequency)?;
                finite("phase", phase)
            }
            AttackSignal::Bangbang {
                amplitude,
                switch_prob,
            } => {
                finite("amplitude", amplitude)?;
                if !(0.0..=1.0).contains(&switch_prob) {
                    return Err(Error::Domain(format!(
                        "switch_prob must lie in [0, 1], got {switch_prob}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// `horizon` samples of `signal`, clipped to `[−w, w]`. Random kinds draw from
/// stream `stream` of a generator seeded with `seed`.
pub fn sample_attack(
    signal: &AttackSignal,
    w: f64,
    horizon: usize,
    ts: f64,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let raw: Vec<f64> = match *signal {
        AttackSignal::Zero => vec![0.0; horizon],
        AttackSignal::Constant { amplitude } => vec![amplitude; horizon],
        AttackSignal::Sine {
            amplitude,
            frequency,
            phase,
        } => (0..horizon)
            .map(|k| amplitude * (std::f64::consts::TAU * frequency * k as f64 * ts + phase).sin())
            .collect(),
        AttackSignal::Uniform { amplitude } => (0..horizon)
            .map(|_| amplitude * rng.random_range(-1.0..=1.0))
            .collect(),
        AttackSignal::Bangbang {
            amplitude,
            switch_prob,
        } => {
            let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (0..horizon)
                .map(|_| {
                    if rng.random_bool(switch_prob) {
                        sign = -sign;
                    }
                    amplitude * sign
                })
                .collect()
        }
    };
    raw.into_iter().map(|v| v.clamp(-w, w)).collect()
}

/// Deviations from equilibrium at `k = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialOffsets {
    /// Per follower `(e, ė, z)`; missing entries are zero.
    #[serde(default)]
    pub followers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonScenario {
    pub params: PlatoonParams,
    /// One per follower (`m − 1` entries).
    pub realizations: Vec<Realization>,
    pub lead: LeadProfile,
    /// Per follower, six channel signals.
    pub attacks: Vec<[AttackSignal; CHANNELS]>,
    pub bounds: AttackBounds,
    pub horizon: usize,
    pub initial: InitialOffsets,
    pub seed: u64,
}

impl PlatoonScenario {
    /// Attack-free scenario with every follower using `real`.
    pub fn nominal(params: PlatoonParams, real: Realization, lead: LeadProfile, horizon: usize) -> Result<Self> {
        let followers = params.m.saturating_sub(1);
        Ok(Self {
            params,
            realizations: vec![real; followers],
            lead,
            attacks: vec![Default::default(); followers],
            bounds: AttackBounds::uniform(CHANNELS, 1.0)?,
            horizon,
            initial: InitialOffsets::default(),
            seed: 0,
        })
    }

    pub fn followers(&self) -> usize {
        self.params.m.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let f = self.followers();
        if f == 0 {
            return Err(Error::Domain("a platoon needs at least one follower (m ≥ 2)".into()));
        }
        if self.realizations.len() != f || self.attacks.len() != f {
            return Err(Error::Dimension(format!(
                "{f} followers but {} realizations and {} attack sets",
                self.realizations.len(),
                self.attacks.len()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        if self.lead.samples.len() < self.horizon {
            return Err(Error::Dimension(format!(
                "lead profile has {} samples, horizon is {}",
                self.lead.samples.len(),
                self.horizon
            )));
        }
        if !self.lead.v0.is_finite() || self.lead.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("lead profile must be finite".into()));
        }
        if self.bounds.channels() != CHANNELS {
            return Err(Error::Dimension(format!("attack bounds need {CHANNELS} channels")));
        }
        if self.initial.followers.len() > f {
            return Err(Error::Dimension("more initial offsets than followers".into()));
        }
        for set in &self.attacks {
            for s in set {
                s.validate()?;
            }
        }
        Ok(())
    }
}

/// Linear functional over `[state; input]`.
type Form = DVector<f64>;

/// Output maps of one vehicle over `[state; input]`.
#[derive(Debug, Clone, PartialEq)]
struct VehicleForms {
    v: Form,
    a: Form,
    u: Form,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub continuous_a: DMatrix<f64>,
    pub continuous_b: DMatrix<f64>,
    pub discrete: DiscreteSystem,
    /// Velocity, acceleration, input of vehicles `1..=m`.
    forms: Vec<VehicleForms>,
    controllers: Vec<RealizedController>,
}

impl StackedSystem {
    pub fn state_dim(&self) -> usize {
        self.continuous_a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.continuous_b.ncols()
    }
}

pub fn follower_offset(i: usize) -> usize {
    LEAD_STATES + FOLLOWER_STATES * i
}

pub fn attack_offset(i: usize) -> usize {
    1 + CHANNELS * i
}

/// Builds and discretizes the chain. Marginally stable followers only log a warning.
pub fn build_stacked_system(scenario: &PlatoonScenario) -> Result<StackedSystem> {
    scenario.validate()?;
    let params = &scenario.params;
    let model = PlatoonModel::new_unchecked(params)?;
    if !model.closed_loop.is_stable() {
        log::warn!(
            "follower closed loop is not asymptotically stable (spectral abscissa {:e})",
            model.closed_loop.spectral_abscissa
        );
    }
    let f = scenario.followers();
    let ns = LEAD_STATES + FOLLOWER_STATES * f;
    let ni = 1 + CHANNELS * f;
    let dim = ns + ni;
    let unit = |k: usize| {
        let mut v = Form::zeros(dim);
        v[k] = 1.0;
        v
    };
    let (plant, sensor, h, tau) = (&model.plant, &model.sensor, params.h, params.tau);

    let mut rows: Vec<Form> = vec![Form::zeros(dim); ns];
    // Lead: v̇ = a, ȧ = (u − a)/τ.
    rows[0] = unit(1);
    rows[1] = (unit(ns) - unit(1)) / tau;
    let mut forms = vec![VehicleForms {
        v: unit(0),
        a: unit(1),
        u: unit(ns),
    }];
    let mut controllers = Vec::with_capacity(f);

    for (i, real) in scenario.realizations.iter().enumerate() {
        let o = follower_offset(i);
        let prev = forms[i].clone();
        let ctrl = model.realized_controller(real)?;
        let x = [unit(o), unit(o + 1), unit(o + 2), prev.v.clone(), prev.a.clone()];
        // y = C x + D u_prev + δ
        let y: Vec<Form> = (0..CHANNELS)
            .map(|r| {
                let mut form = unit(ns + attack_offset(i)) * 0.0;
                for (c, xc) in x.iter().enumerate() {
                    if sensor.c[(r, c)] != 0.0 {
                        form += xc * sensor.c[(r, c)];
                    }
                }
                form += &prev.u * sensor.d[(r, 0)];
                form + unit(ns + attack_offset(i) + r)
            })
            .collect();
        let mut u = unit(o + 3) * ctrl.c_c;
        for (r, yr) in y.iter().enumerate() {
            u += yr * ctrl.d_c[r];
        }
        for r in 0..3 {
            let mut row = &u * plant.b1[(r, 0)] + &prev.u * plant.b2[(r, 0)];
            for (c, xc) in x.iter().enumerate() {
                if plant.a[(r, c)] != 0.0 {
                    row += xc * plant.a[(r, c)];
                }
            }
            rows[o + r] = row;
        }
        let mut rho_row = unit(o + 3) * ctrl.a_c;
        for (r, yr) in y.iter().enumerate() {
            rho_row += yr * ctrl.b_c[r];
        }
        rows[o + 3] = rho_row;
        let v = &prev.v - unit(o + 2);
        let a = (unit(o + 2) - unit(o + 1)) / h;
        forms.push(VehicleForms { v, a, u });
        controllers.push(ctrl);
    }

    let mut ca = DMatrix::zeros(ns, ns);
    let mut cb = DMatrix::zeros(ns, ni);
    for (r, row) in rows.iter().enumerate() {
        for c in 0..ns {
            ca[(r, c)] = row[c];
        }
        for c in 0..ni {
            cb[(r, c)] = row[ns + c];
        }
    }
    let discrete = lti::discretize(&ca, &cb, params.ts)?;
    Ok(StackedSystem {
        continuous_a: ca,
        continuous_b: cb,
        discrete,
        forms,
        controllers,
    })
}

/// Sampled signals of one follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerSeries {
    /// Vehicle index, 2 for the first follower.
    pub vehicle: usize,
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub e: Vec<f64>,
    pub e_dot: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub rho_bar: Vec<f64>,
    /// Controller state mapped back to the base coordinates.
    pub rho: Vec<f64>,
}

impl FollowerSeries {
    /// Decoupled state `(e, ė, z, ρ)` at sample `k`.
    pub fn decoupled_state(&self, k: usize) -> DVector<f64> {
        DVector::from_vec(vec![self.e[k], self.e_dot[k], self.z[k], self.rho[k]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerMetrics {
    pub vehicle: usize,
    pub max_abs_e: f64,
    pub min_d: f64,
    pub collision: bool,
    pub rms_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub lead_v: Vec<f64>,
    pub lead_a: Vec<f64>,
    pub lead_u: Vec<f64>,
    pub followers: Vec<FollowerSeries>,
    pub metrics: Vec<FollowerMetrics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn collision(&self) -> bool {
        self.metrics.iter().any(|m| m.collision)
    }

    pub fn max_abs_e(&self) -> f64 {
        self.metrics.iter().map(|m| m.max_abs_e).fold(0.0, f64::max)
    }

    /// `(max |Δu|, max |Δe|)` over all followers and samples.
    pub fn max_difference(&self, other: &Trajectory) -> Result<(f64, f64)> {
        if self.len() != other.len() || self.followers.len() != other.followers.len() {
            return Err(Error::Dimension("trajectories have different shapes".into()));
        }
        let max_diff = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let mut du = 0.0f64;
        let mut de = 0.0f64;
        for (f, g) in self.followers.iter().zip(&other.followers) {
            du = du.max(max_diff(&f.u, &g.u));
            de = de.max(max_diff(&f.e, &g.e));
        }
        Ok((du, de))
    }

    /// Follower rows in `k,t,vehicle,d,v,a,e,u` order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for (k, t) in self.t.iter().enumerate() {
            for f in &self.followers {
                writeln!(
                    out,
                    "{k},{t},{},{},{},{},{},{}",
                    f.vehicle, f.d[k], f.v[k], f.a[k], f.e[k], f.u[k]
                )?;
            }
        }
        Ok(())
    }
}

/// Samples every attack channel of every follower.
pub fn attack_inputs(scenario: &PlatoonScenario) -> Vec<Vec<[f64; CHANNELS]>> {
    let w = scenario.bounds.values();
    scenario
        .attacks
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let channels: Vec<Vec<f64>> = set
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let stream = (i * CHANNELS + j) as u64;
                    sample_attack(s, w[j], scenario.horizon, scenario.params.ts, scenario.seed, stream)
                })
                .collect();
            (0..scenario.horizon)
                .map(|k| std::array::from_fn(|j| channels[j][k]))
                .collect()
        })
        .collect()
}

/// Simulates the scenario from its initial condition.
pub fn run(scenario: &PlatoonScenario) -> Result<Trajectory> {
    let stacked = build_stacked_system(scenario)?;
    let attacks = attack_inputs(scenario);
    run_with_attacks(scenario, &stacked, &attacks)
}

/// Simulation with explicit attack samples (`attacks[i][k][j]`).
pub fn run_with_attacks(
    scenario: &PlatoonScenario,
    stacked: &StackedSystem,
    attacks: &[Vec<[f64; CHANNELS]>],
) -> Result<Trajectory> {
    let f = scenario.followers();
    let horizon = scenario.horizon;
    if attacks.len() != f || attacks.iter().any(|a| a.len() < horizon) {
        return Err(Error::Dimension("attack samples do not match the scenario".into()));
    }
    let params = &scenario.params;
    let ns = stacked.state_dim();
    let ni = stacked.input_dim();

    let inputs: Vec<DVector<f64>> = (0..horizon)
        .map(|k| {
            let mut w = DVector::zeros(ni);
            w[0] = scenario.lead.samples[k];
            for (i, a) in attacks.iter().enumerate() {
                for j in 0..CHANNELS {
                    w[attack_offset(i) + j] = a[k][j];
                }
            }
            w
        })
        .collect();

    let x0 = initial_state(scenario, stacked)?;
    let states = lti::rollout(&stacked.discrete, &x0, &inputs)?;

    let n = horizon + 1;
    let eval = |form: &Form, x: &DVector<f64>, w: &DVector<f64>| {
        form.rows(0, ns).dot(x) + form.rows(ns, ni).dot(w)
    };
    // The last sample reuses the final held input.
    let input_at = |k: usize| &inputs[k.min(horizon - 1)];

    let t: Vec<f64> = (0..n).map(|k| k as f64 * params.ts).collect();
    let lead = &stacked.forms[0];
    let lead_v = (0..n).map(|k| states[k][0]).collect();
    let lead_a = (0..n).map(|k| states[k][1]).collect();
    let lead_u = (0..n).map(|k| eval(&lead.u, &states[k], input_at(k))).collect();

    let mut followers = Vec::with_capacity(f);
    let mut metrics = Vec::with_capacity(f);
    for i in 0..f {
        let o = follower_offset(i);
        let forms = &stacked.forms[i + 1];
        let real = &scenario.realizations[i];
        let beta = real.beta();
        let model_c = sensor_rows(params)?;
        let mut s = FollowerSeries {
            vehicle: i + 2,
            d: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            e: Vec::with_capacity(n),
            e_dot: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            rho_bar: Vec::with_capacity(n),
            rho: Vec::with_capacity(n),
        };
        let prev_forms = &stacked.forms[i];
        for (k, x) in states.iter().enumerate() {
            let w = input_at(k);
            let (e, e_dot, z, rho_bar) = (x[o], x[o + 1], x[o + 2], x[o + 3]);
            let v = eval(&forms.v, x, w);
            let local = [e, e_dot, z, eval(&prev_forms.v, x, w), eval(&prev_forms.a, x, w)];
            let beta_cx: f64 = (0..CHANNELS)
                .map(|r| beta[r] * (0..5).map(|c| model_c[(r, c)] * local[c]).sum::<f64>())
                .sum();
            s.d.push(e + params.r + params.h * v);
            s.v.push(v);
            s.a.push(eval(&forms.a, x, w));
            s.e.push(e);
            s.e_dot.push(e_dot);
            s.z.push(z);
            s.u.push(eval(&forms.u, x, w));
            s.rho_bar.push(rho_bar);
            s.rho.push((rho_bar - beta_cx) / real.alpha());
        }
        metrics.push(FollowerMetrics {
            vehicle: i + 2,
            max_abs_e: s.e.iter().map(|v| v.abs()).fold(0.0, f64::max),
            min_d: s.d.iter().copied().fold(f64::INFINITY, f64::min),
            collision: s.d.iter().any(|d| *d <= 0.0),
            rms_u: (s.u.iter().map(|u| u * u).sum::<f64>() / n as f64).sqrt(),
        });
        followers.push(s);
    }
    Ok(Trajectory {
        t,
        lead_v,
        lead_a,
        lead_u,
        followers,
        metrics,
    })
}

fn sensor_rows(params: &PlatoonParams) -> Result<DMatrix<f64>> {
    Ok(crate::model::build_sensor_map(params)?.c)
}

/// Equilibrium at the lead speed plus configured offsets, with each
/// controller state chosen so that `u_i(0) = 0` before any attack.
fn initial_state(scenario: &PlatoonScenario, stacked: &StackedSystem) -> Result<DVector<f64>> {
    let params = &scenario.params;
    let c = sensor_rows(params)?;
    let ns = stacked.state_dim();
    let mut x = DVector::zeros(ns);
    x[0] = scenario.lead.v0;
    let mut v_prev = scenario.lead.v0;
    for i in 0..scenario.followers() {
        let o = follower_offset(i);
        let [e, e_dot, z] = scenario.initial.followers.get(i).copied().unwrap_or([0.0; 3]);
        x[o] = e;
        x[o + 1] = e_dot;
        x[o + 2] = z;
        // Predecessor acceleration at k = 0.
        let a_prev = if i == 0 {
            0.0
        } else {
            let p = follower_offset(i - 1);
            (x[p + 2] - x[p + 1]) / params.h
        };
        let local = [e, e_dot, z, v_prev, a_prev];
        let beta = scenario.realizations[i].beta();
        // β₆ = 0, so the predecessor input does not enter ρ̄(0).
        x[o + 3] = (0..CHANNELS)
            .map(|r| beta[r] * (0..5).map(|col| c[(r, col)] * local[col]).sum::<f64>())
            .sum();
        v_prev -= z;
    }
    Ok(x)
}
