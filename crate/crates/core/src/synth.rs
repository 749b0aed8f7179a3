//! Mechanistic synthetic wells.
//!
//! Each well is a choke valve fed by a declining reservoir. The flow through
//! the choke follows the Bernoulli restriction relation with a homogeneous
//! no-slip mixture density and an equal-percentage valve characteristic.
//! A proportional controller moves the choke to hold a production target,
//! which produces the choke/pressure anticorrelation typical of field data.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AssetDataset, AssetId, DataError, Features, Source, WellId, WellObservation};
use crate::seed;

const BAR_TO_PA: f64 = 1e5;
const GAS_CONSTANT: f64 = 8.314_462_618;
const SECONDS_PER_DAY: f64 = 86_400.0;
/// Gas is reported in thousand Sm³/d liquid equivalents.
const GAS_UNIT: f64 = 1000.0;
/// Below this opening the valve characteristic blends linearly to zero.
const CV_BLEND_U: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("pressure drop is negative (p1={p1}, p2={p2})")]
    NegativePressureDrop { p1: f64, p2: f64 },
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("invalid composition: {0}")]
    InvalidComposition(String),
    #[error("scenario for well {well} is infeasible: {reason}")]
    ScenarioInfeasible { well: String, reason: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Single-phase properties and the standard reference state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidSpec {
    /// Oil density, kg/m³.
    pub rho_oil: f64,
    /// Water density, kg/m³.
    pub rho_water: f64,
    /// Gas molar mass, kg/mol.
    pub gas_molar_mass: f64,
    #[serde(default = "FluidSpec::std_pressure")]
    pub std_pressure_bar: f64,
    #[serde(default = "FluidSpec::std_temp")]
    pub std_temp_c: f64,
}

impl FluidSpec {
    fn std_pressure() -> f64 {
        1.01325
    }

    fn std_temp() -> f64 {
        15.0
    }

    pub fn new(rho_oil: f64, rho_water: f64, gas_molar_mass: f64) -> Self {
        FluidSpec {
            rho_oil,
            rho_water,
            gas_molar_mass,
            std_pressure_bar: Self::std_pressure(),
            std_temp_c: Self::std_temp(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("rho_oil", self.rho_oil),
            ("rho_water", self.rho_water),
            ("gas_molar_mass", self.gas_molar_mass),
            ("std_pressure_bar", self.std_pressure_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Ideal-gas density at line conditions, kg/m³.
    pub fn gas_density(&self, p_bar: f64, temp_c: f64) -> f64 {
        p_bar * BAR_TO_PA * self.gas_molar_mass / (GAS_CONSTANT * (temp_c + 273.15))
    }

    /// Volume of gas at line conditions per unit volume at standard
    /// conditions.
    fn gas_expansion(&self, p_bar: f64, temp_c: f64) -> f64 {
        (self.std_pressure_bar / p_bar) * ((temp_c + 273.15) / (self.std_temp_c + 273.15))
    }
}

/// Equal-percentage valve characteristic `cv_max * R^(u - 1)`, blended
/// linearly to zero below 5 % opening.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValveSpec {
    /// Effective area times flow factor at full opening, m².
    pub cv_max: f64,
    pub rangeability: f64,
}

impl ValveSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.cv_max > 0.0) || !(self.rangeability > 1.0) {
            return Err(SynthError::InvalidScenario(format!(
                "valve needs cv_max > 0 and rangeability > 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn shape(rangeability: f64, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if u >= CV_BLEND_U {
            rangeability.powf(u - 1.0)
        } else {
            rangeability.powf(CV_BLEND_U - 1.0) * u / CV_BLEND_U
        }
    }

    pub fn cv(&self, u: f64) -> f64 {
        self.cv_max * Self::shape(self.rangeability, u)
    }
}

/// Volumetric flow through a restriction, `Q = AC sqrt((p1 - p2) / rho)`.
///
/// Pressures are in bar and converted to Pa, so the result is in m³/s when
/// `area_times_c` is in m².
pub fn choke_flow(area_times_c: f64, p1: f64, p2: f64, rho: f64) -> Result<f64, SynthError> {
    if rho <= 0.0 || !rho.is_finite() {
        return Err(SynthError::NonPositiveDensity(rho));
    }
    if p1 < p2 {
        return Err(SynthError::NegativePressureDrop { p1, p2 });
    }
    Ok(area_times_c * ((p1 - p2) * BAR_TO_PA / rho).sqrt())
}

fn check_composition(phi: [f64; 3]) -> Result<(), SynthError> {
    if phi.iter().any(|p| !(0.0..=1.0).contains(p)) || ((phi.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidComposition(format!("{phi:?}")));
    }
    Ok(())
}

/// Line-condition volume per unit of reported liquid-equivalent rate,
/// followed by the mass carried by that unit, for composition
/// `[gas, oil, water]`.
fn line_volume_and_mass(phi: [f64; 3], fluid: &FluidSpec, p_bar: f64, temp_c: f64) -> (f64, f64) {
    let gas_line = phi[0] * GAS_UNIT * fluid.gas_expansion(p_bar, temp_c);
    let volume = gas_line + phi[1] + phi[2];
    let mass = gas_line * fluid.gas_density(p_bar, temp_c) + phi[1] * fluid.rho_oil + phi[2] * fluid.rho_water;
    (volume, mass)
}

/// Homogeneous no-slip mixture density at line conditions.
///
/// `phi` is the standard-condition composition `[gas, oil, water]` with gas
/// in liquid-equivalent units; gas volume is expanded to line conditions
/// with the ideal-gas law before mixing.
pub fn mixture_density(phi: [f64; 3], fluid: &FluidSpec, p_bar: f64, temp_c: f64) -> Result<f64, SynthError> {
    check_composition(phi)?;
    if !(p_bar > 0.0) || !(temp_c > -273.15) {
        return Err(SynthError::InvalidScenario(format!("line state p={p_bar} bar, T={temp_c} °C")));
    }
    let (volume, mass) = line_volume_and_mass(phi, fluid, p_bar, temp_c);
    Ok(mass / volume)
}

/// Mechanistic rate model of one well's choke.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChokePhysics {
    pub fluid: FluidSpec,
    pub valve: ValveSpec,
}

impl ChokePhysics {
    /// Total reported rate (Sm³/d liquid equivalents) for the given state.
    /// Fluid properties are evaluated at upstream conditions.
    pub fn rate(&self, x: &Features) -> Result<f64, SynthError> {
        let phi = [x.phi_g, x.phi_o, x.phi_w];
        let rho = mixture_density(phi, &self.fluid, x.p1, x.temp)?;
        let (volume, _) = line_volume_and_mass(phi, &self.fluid, x.p1, x.temp);
        let q_line = choke_flow(self.valve.cv(x.u), x.p1, x.p2, rho)?;
        Ok(q_line * SECONDS_PER_DAY / volume)
    }

    /// Rate per unit of `cv` at the given state (used to size valves).
    fn rate_per_cv(&self, x: &Features) -> Result<f64, SynthError> {
        let unit = ChokePhysics {
            fluid: self.fluid,
            valve: ValveSpec {
                cv_max: 1.0,
                rangeability: self.valve.rangeability,
            },
        };
        let probe = Features { u: 1.0, ..*x };
        unit.rate(&probe)
    }
}

/// Everything needed to simulate one well.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellScenario {
    pub fluid: FluidSpec,
    pub valve: ValveSpec,
    /// Reservoir pressure at t = 0, bar.
    pub p_res0: f64,
    /// Linear reservoir pressure decline, bar/day.
    pub decline_rate: f64,
    /// Inflow productivity, reported rate per bar of drawdown. Upstream
    /// pressure is `p_res - Q / productivity`.
    pub productivity: f64,
    /// Downstream pressure setpoint, bar.
    pub p2_setpoint: f64,
    /// Standard deviation of manifold pressure fluctuation, bar.
    pub p2_noise: f64,
    /// Upstream temperature at target rate, °C.
    pub temp0: f64,
    /// Temperature change per unit of relative rate deviation, °C.
    pub temp_rate_coeff: f64,
    /// Gas share of the hydrocarbon fraction, constant over time.
    pub gas_share: f64,
    pub water_cut0: f64,
    /// Water-cut drift, fraction per day.
    pub water_cut_drift: f64,
    pub water_cut_max: f64,
    /// Initial production target, Sm³/d liquid equivalents.
    pub rate_target: f64,
    /// Days between operator target changes (0 disables them).
    pub target_step_days: f64,
    /// Maximum relative size of a target change.
    pub target_step_rel: f64,
    /// Mean days between observations.
    pub cadence_days: f64,
    pub horizon_days: f64,
    pub sigma_sep: f64,
    pub sigma_mpfm: f64,
    /// Fraction of observations measured by a multiphase meter.
    pub mpfm_fraction: f64,
    /// Controller gain as a fraction of `1 / ln(rangeability)`.
    pub controller_gain: f64,
    pub seed: u64,
}

impl WellScenario {
    pub fn physics(&self) -> ChokePhysics {
        ChokePhysics {
            fluid: self.fluid,
            valve: self.valve,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.fluid.validate()?;
        self.valve.validate()?;
        let checks = [
            ("decline_rate >= 0", self.decline_rate >= 0.0),
            ("sigma_sep >= 0", self.sigma_sep >= 0.0),
            ("sigma_mpfm >= 0", self.sigma_mpfm >= 0.0),
            ("p2_noise >= 0", self.p2_noise >= 0.0),
            ("horizon_days > 0", self.horizon_days > 0.0),
            ("cadence_days > 0", self.cadence_days > 0.0),
            ("productivity > 0", self.productivity > 0.0),
            ("rate_target > 0", self.rate_target > 0.0),
            ("p2_setpoint > 0", self.p2_setpoint > 0.0),
            ("p_res0 > p2_setpoint", self.p_res0 > self.p2_setpoint),
            ("gas_share in [0, 1]", (0.0..=1.0).contains(&self.gas_share)),
            ("water_cut0 in [0, 1]", (0.0..=1.0).contains(&self.water_cut0)),
            ("water_cut_max in [0, 1]", (0.0..=1.0).contains(&self.water_cut_max)),
            ("mpfm_fraction in [0, 1]", (0.0..=1.0).contains(&self.mpfm_fraction)),
            ("controller_gain in (0, 1]", self.controller_gain > 0.0 && self.controller_gain <= 1.0),
            ("target_step_rel in [0, 1)", (0.0..1.0).contains(&self.target_step_rel)),
        ];
        for (what, ok) in checks {
            if !ok {
                return Err(SynthError::InvalidScenario(format!("requires {what}")));
            }
        }
        Ok(())
    }

    fn composition(&self, t: f64) -> [f64; 3] {
        let wc = (self.water_cut0 + self.water_cut_drift * t).clamp(0.0, self.water_cut_max.max(self.water_cut0));
        let hc = 1.0 - wc;
        let gas = hc * self.gas_share;
        [gas, hc - gas, 1.0 - gas - (hc - gas)]
    }
}

/// Resolves the coupled choke/inflow system for the rate at opening `u`.
struct WellState<'a> {
    scenario: &'a WellScenario,
    physics: ChokePhysics,
}

impl WellState<'_> {
    /// Steady rate and upstream pressure for reservoir pressure `p_res`.
    fn solve(&self, u: f64, p_res: f64, p2: f64, phi: [f64; 3], temp: f64) -> Result<(f64, f64), SynthError> {
        let s = self.scenario;
        let q_max = s.productivity * (p_res - p2);
        if q_max <= 0.0 {
            return Ok((0.0, p2.max(p_res)));
        }
        let features = |q: f64| Features {
            u,
            p1: p_res - q / s.productivity,
            p2,
            temp,
            phi_g: phi[0],
            phi_o: phi[1],
            phi_w: phi[2],
        };
        // g(q) = rate(q) - q is strictly decreasing on [0, q_max].
        let (mut lo, mut hi) = (0.0, q_max);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let x = features(mid);
            if self.physics.rate(&x)? > mid {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * q_max {
                break;
            }
        }
        let q = 0.5 * (lo + hi);
        Ok((q, p_res - q / s.productivity))
    }
}

/// Simulates one well and returns its time-sorted observations. The
/// controller starts settled at the opening that meets the initial target.
pub fn simulate_well(well: &WellId, asset: &AssetId, scenario: &WellScenario) -> Result<Vec<WellObservation>, SynthError> {
    scenario.validate()?;
    let s = scenario;
    let state = WellState {
        scenario: s,
        physics: s.physics(),
    };
    let infeasible = |reason: String| SynthError::ScenarioInfeasible {
        well: well.0.clone(),
        reason,
    };
    let mut rng = seed::rng(s.seed);
    let phi0 = s.composition(0.0);

    let (q_full, _) = state.solve(1.0, s.p_res0, s.p2_setpoint, phi0, s.temp0)?;
    if q_full < s.rate_target {
        return Err(infeasible(format!(
            "target {:.3} exceeds the fully open rate {:.3} on day 0",
            s.rate_target, q_full
        )));
    }
    // Settled initial opening by bisection on the monotone rate curve.
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (q, _) = state.solve(mid, s.p_res0, s.p2_setpoint, phi0, s.temp0)?;
        if q < s.rate_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = hi.max(CV_BLEND_U);
    let gain = s.controller_gain / s.valve.rangeability.ln();

    let mut target = s.rate_target;
    let mut next_step = if s.target_step_days > 0.0 { s.target_step_days } else { f64::INFINITY };
    let mut out = Vec::new();
    let mut t = 0.0;
    while t <= s.horizon_days {
        if t >= next_step {
            let r: f64 = rng.random_range(-1.0..=1.0);
            target *= 1.0 + s.target_step_rel * r;
            next_step += s.target_step_days;
        }
        let p_res = s.p_res0 - s.decline_rate * t;
        let p2_noise: f64 = if s.p2_noise > 0.0 {
            s.p2_noise * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let p2 = (s.p2_setpoint + p2_noise).max(1.0);
        let phi = s.composition(t);

        // Operator correction based on the current rate, then the state that
        // is averaged into the observation.
        let (q_now, _) = state.solve(u, p_res, p2, phi, s.temp0)?;
        if q_now > 0.0 {
            u = (u + gain * (target / q_now).ln()).clamp(CV_BLEND_U, 1.0);
        }
        let (q_true, p1) = state.solve(u, p_res, p2, phi, s.temp0)?;
        if q_true <= 0.0 || p1 <= p2 {
            // Reservoir can no longer lift against the manifold.
            break;
        }
        let temp = s.temp0 + s.temp_rate_coeff * (q_true / s.rate_target - 1.0);
        // Temperature enters the physics; re-evaluate at the averaged state.
        let x = Features {
            u,
            p1,
            p2,
            temp,
            phi_g: phi[0],
            phi_o: phi[1],
            phi_w: phi[2],
        };
        let q_true = state.physics.rate(&x)?;

        let source = if rng.random::<f64>() < s.mpfm_fraction {
            Source::Mpfm
        } else {
            Source::Separator
        };
        let sigma = match source {
            Source::Mpfm => s.sigma_mpfm,
            Source::Separator => s.sigma_sep,
        };
        let q_obs = loop {
            let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            let q = q_true * (1.0 + sigma * z);
            if q > 0.0 {
                break q;
            }
        };
        out.push(WellObservation::from_total(well.clone(), asset.clone(), t, x, q_obs, source));

        let jitter: f64 = rng.random_range(0.5..1.5);
        t += s.cadence_days * jitter;
    }
    if out.is_empty() {
        return Err(infeasible("no producing observations".into()));
    }
    Ok(out)
}

/// Inclusive range sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.1 <= self.0 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    fn validate(&self, name: &str) -> Result<(), SynthError> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.1 < self.0 {
            return Err(SynthError::InvalidScenario(format!("{name}: invalid range {self:?}")));
        }
        Ok(())
    }
}

/// Produces one scenario per well of an asset.
pub trait ScenarioSampler {
    fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng, well_index: usize) -> Result<WellScenario, SynthError>;
}

/// Always returns the same scenario.
pub struct FixedScenario(pub WellScenario);

impl ScenarioSampler for FixedScenario {
    fn sample(&self, _rng: &mut rand_chacha::ChaCha8Rng, _well_index: usize) -> Result<WellScenario, SynthError> {
        Ok(self.0.clone())
    }
}

/// Ranges from which the wells of one asset are drawn.
///
/// The valve is sized so that the initial target is met at an opening drawn
/// from `initial_choke`, unless `cv_max` is given explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub name: String,
    pub wells: usize,
    pub p_res0: Span,
    pub decline_rate: Span,
    pub drawdown: Span,
    pub p2_setpoint: Span,
    pub p2_noise: f64,
    pub temp0: Span,
    pub temp_rate_coeff: f64,
    pub gas_share: Span,
    pub water_cut0: Span,
    pub water_cut_drift: Span,
    pub water_cut_max: f64,
    pub rate_target: Span,
    pub target_step_days: f64,
    pub target_step_rel: f64,
    pub rangeability: Span,
    pub initial_choke: Span,
    #[serde(default)]
    pub cv_max: Option<Span>,
    pub rho_oil: Span,
    pub rho_water: Span,
    pub gas_molar_mass: Span,
    pub cadence_days: Span,
    pub horizon_days: f64,
    pub sigma_sep: f64,
    pub sigma_mpfm: f64,
    pub mpfm_fraction: f64,
    pub controller_gain: f64,
}

impl AssetSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.wells == 0 {
            return Err(SynthError::InvalidScenario(format!("asset {}: wells must be >= 1", self.name)));
        }
        for (n, s) in [
            ("p_res0", &self.p_res0),
            ("decline_rate", &self.decline_rate),
            ("drawdown", &self.drawdown),
            ("p2_setpoint", &self.p2_setpoint),
            ("temp0", &self.temp0),
            ("gas_share", &self.gas_share),
            ("water_cut0", &self.water_cut0),
            ("water_cut_drift", &self.water_cut_drift),
            ("rate_target", &self.rate_target),
            ("rangeability", &self.rangeability),
            ("initial_choke", &self.initial_choke),
            ("rho_oil", &self.rho_oil),
            ("rho_water", &self.rho_water),
            ("gas_molar_mass", &self.gas_molar_mass),
            ("cadence_days", &self.cadence_days),
        ] {
            s.validate(&format!("asset {}: {n}", self.name))?;
        }
        if let Some(cv) = &self.cv_max {
            cv.validate(&format!("asset {}: cv_max", self.name))?;
        }
        if !(self.initial_choke.0 > CV_BLEND_U && self.initial_choke.1 <= 1.0) {
            return Err(SynthError::InvalidScenario(format!(
                "asset {}: initial_choke must lie in ({CV_BLEND_U}, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

impl ScenarioSampler for AssetSpec {
    fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng, _well_index: usize) -> Result<WellScenario, SynthError> {
        let fluid = FluidSpec::new(
            self.rho_oil.sample(rng),
            self.rho_water.sample(rng),
            self.gas_molar_mass.sample(rng),
        );
        let rangeability = self.rangeability.sample(rng);
        let p_res0 = self.p_res0.sample(rng);
        let rate_target = self.rate_target.sample(rng);
        let drawdown = self.drawdown.sample(rng);
        let p2_setpoint = self.p2_setpoint.sample(rng);
        let temp0 = self.temp0.sample(rng);
        let gas_share = self.gas_share.sample(rng);
        let water_cut0 = self.water_cut0.sample(rng);
        let u0 = self.initial_choke.sample(rng);
        let mut scenario = WellScenario {
            fluid,
            valve: ValveSpec {
                cv_max: 1.0,
                rangeability,
            },
            p_res0,
            decline_rate: self.decline_rate.sample(rng),
            productivity: rate_target / drawdown,
            p2_setpoint,
            p2_noise: self.p2_noise,
            temp0,
            temp_rate_coeff: self.temp_rate_coeff,
            gas_share,
            water_cut0,
            water_cut_drift: self.water_cut_drift.sample(rng),
            water_cut_max: self.water_cut_max,
            rate_target,
            target_step_days: self.target_step_days,
            target_step_rel: self.target_step_rel,
            cadence_days: self.cadence_days.sample(rng),
            horizon_days: self.horizon_days,
            sigma_sep: self.sigma_sep,
            sigma_mpfm: self.sigma_mpfm,
            mpfm_fraction: self.mpfm_fraction,
            controller_gain: self.controller_gain,
            seed: 0,
        };
        scenario.valve.cv_max = match &self.cv_max {
            Some(span) => span.sample(rng),
            None => {
                // Size the valve so the target is met at u0 on day 0, where
                // upstream pressure is p_res0 - drawdown.
                let x = Features {
                    u: u0,
                    p1: p_res0 - drawdown,
                    p2: p2_setpoint,
                    temp: temp0,
                    phi_g: scenario.composition(0.0)[0],
                    phi_o: scenario.composition(0.0)[1],
                    phi_w: scenario.composition(0.0)[2],
                };
                if x.p1 <= x.p2 {
                    return Err(SynthError::InvalidScenario(format!(
                        "asset {}: drawdown {drawdown} leaves no pressure drop over the choke",
                        self.name
                    )));
                }
                let per_cv = scenario.physics().rate_per_cv(&x)?;
                rate_target / (per_cv * ValveSpec::shape(rangeability, u0))
            }
        };
        Ok(scenario)
    }
}

/// Synthetic benchmark description: a root seed and a list of assets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub assets: Vec<AssetSpec>,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.assets.is_empty() {
            return Err(SynthError::InvalidScenario("at least one asset is required".into()));
        }
        for a in &self.assets {
            a.validate()?;
        }
        Ok(())
    }

    pub fn n_wells(&self) -> usize {
        self.assets.iter().map(|a| a.wells).sum()
    }
}

impl Default for SyntheticConfig {
    /// Twelve wells on two assets with disjoint pressure regimes.
    fn default() -> Self {
        let base = AssetSpec {
            name: "A1".into(),
            wells: 6,
            p_res0: Span(150.0, 175.0),
            decline_rate: Span(0.03, 0.06),
            drawdown: Span(15.0, 30.0),
            p2_setpoint: Span(20.0, 35.0),
            p2_noise: 2.0,
            temp0: Span(55.0, 75.0),
            temp_rate_coeff: 4.0,
            gas_share: Span(0.3, 0.6),
            water_cut0: Span(0.05, 0.3),
            water_cut_drift: Span(0.0001, 0.0004),
            water_cut_max: 0.85,
            rate_target: Span(300.0, 900.0),
            target_step_days: 120.0,
            target_step_rel: 0.2,
            rangeability: Span(15.0, 50.0),
            initial_choke: Span(0.3, 0.5),
            cv_max: None,
            rho_oil: Span(780.0, 880.0),
            rho_water: Span(1010.0, 1040.0),
            gas_molar_mass: Span(0.017, 0.022),
            cadence_days: Span(2.0, 4.0),
            horizon_days: 700.0,
            sigma_sep: 0.01,
            sigma_mpfm: 0.05,
            mpfm_fraction: 0.8,
            controller_gain: 0.5,
        };
        let high = AssetSpec {
            name: "A2".into(),
            p_res0: Span(300.0, 340.0),
            decline_rate: Span(0.05, 0.1),
            drawdown: Span(20.0, 40.0),
            p2_setpoint: Span(40.0, 60.0),
            temp0: Span(80.0, 100.0),
            gas_share: Span(0.5, 0.8),
            rangeability: Span(20.0, 60.0),
            ..base.clone()
        };
        SyntheticConfig {
            seed: 1,
            assets: vec![base, high],
        }
    }
}

/// Generates `n_wells` wells of one asset. Well `k` gets the seed
/// `derive_index(seed, k)` for both scenario sampling and simulation.
pub fn generate_asset(
    asset: &AssetId,
    n_wells: usize,
    sampler: &dyn ScenarioSampler,
    seed: u64,
) -> Result<(Vec<WellObservation>, BTreeMap<WellId, WellScenario>), SynthError> {
    if n_wells == 0 {
        return Err(SynthError::InvalidScenario("n_wells must be >= 1".into()));
    }
    let mut observations = Vec::new();
    let mut scenarios = BTreeMap::new();
    for k in 0..n_wells {
        let well_seed = seed::derive_index(seed, k as u64);
        let mut rng = seed::rng(seed::derive(well_seed, "scenario"));
        let mut scenario = sampler.sample(&mut rng, k)?;
        scenario.seed = seed::derive(well_seed, "simulate");
        let well = WellId(format!("{}-W{:02}", asset.0, k + 1));
        observations.extend(simulate_well(&well, asset, &scenario)?);
        scenarios.insert(well, scenario);
    }
    Ok((observations, scenarios))
}

/// A generated dataset plus the scenarios that produced each well.
#[derive(Clone, Debug)]
pub struct GeneratedAssets {
    pub dataset: AssetDataset,
    pub scenarios: BTreeMap<WellId, WellScenario>,
}

/// Generates every asset of a configuration.
pub fn generate(config: &SyntheticConfig) -> Result<GeneratedAssets, SynthError> {
    config.validate()?;
    let mut observations = Vec::new();
    let mut scenarios = BTreeMap::new();
    for spec in &config.assets {
        let asset = AssetId(spec.name.clone());
        let (obs, sc) = generate_asset(&asset, spec.wells, spec, seed::derive(config.seed, &spec.name))?;
        observations.extend(obs);
        scenarios.extend(sc);
    }
    Ok(GeneratedAssets {
        dataset: AssetDataset::new(observations)?,
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn steady_scenario() -> WellScenario {
        let spec = SyntheticConfig::default().assets[0].clone();
        let mut rng = seed::rng(5);
        let mut s = spec.sample(&mut rng, 0).unwrap();
        s.decline_rate = 0.0;
        s.p2_noise = 0.0;
        s.sigma_mpfm = 0.0;
        s.sigma_sep = 0.0;
        s.target_step_days = 0.0;
        s.water_cut_drift = 0.0;
        s.seed = 9;
        s
    }

    #[test]
    fn choke_flow_unit_cases() {
        // 1 Pa = 1e-5 bar
        assert_relative_eq!(choke_flow(1.0, 1e-5, 0.0, 1.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(choke_flow(1.0, 50.0, 50.0, 800.0).unwrap(), 0.0);
        assert_relative_eq!(choke_flow(2.0, 9e-5, 0.0, 1.0).unwrap(), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn choke_flow_errors() {
        assert!(matches!(choke_flow(1.0, 10.0, 20.0, 1.0), Err(SynthError::NegativePressureDrop { .. })));
        assert!(matches!(choke_flow(1.0, 20.0, 10.0, 0.0), Err(SynthError::NonPositiveDensity(_))));
    }

    #[test]
    fn mixture_density_cases() {
        let fluid = FluidSpec::new(800.0, 1000.0, 0.019);
        assert_eq!(mixture_density([0.0, 1.0, 0.0], &fluid, 50.0, 60.0).unwrap(), 800.0);
        assert_relative_eq!(mixture_density([0.0, 0.5, 0.5], &fluid, 50.0, 60.0).unwrap(), 900.0, max_relative = 1e-12);
        // Ideal gas: rho = pM/(RT) with p = 50e5 Pa, T = 333.15 K.
        let expected = 50.0e5 * 0.019 / (8.314_462_618 * 333.15);
        assert_relative_eq!(
            mixture_density([1.0, 0.0, 0.0], &fluid, 50.0, 60.0).unwrap(),
            expected,
            max_relative = 1e-12
        );
        assert!(matches!(
            mixture_density([0.5, 0.6, 0.0], &fluid, 50.0, 60.0),
            Err(SynthError::InvalidComposition(_))
        ));
    }

    #[test]
    fn valve_curve_is_monotone_and_hits_cv_max() {
        let v = ValveSpec {
            cv_max: 2e-3,
            rangeability: 30.0,
        };
        assert_eq!(v.cv(0.0), 0.0);
        assert_eq!(v.cv(1.0), 2e-3);
        let mut prev = -1.0;
        for i in 0..=1000 {
            let c = v.cv(i as f64 / 1000.0);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn rate_is_increasing_in_upstream_pressure() {
        let physics = ChokePhysics {
            fluid: FluidSpec::new(820.0, 1020.0, 0.02),
            valve: ValveSpec {
                cv_max: 1e-3,
                rangeability: 25.0,
            },
        };
        for phi in [[0.0, 1.0, 0.0], [0.4, 0.4, 0.2], [0.9, 0.05, 0.05]] {
            let mut prev = 0.0;
            for k in 0..200 {
                let x = Features {
                    u: 0.4,
                    p1: 31.0 + k as f64,
                    p2: 30.0,
                    temp: 70.0,
                    phi_g: phi[0],
                    phi_o: phi[1],
                    phi_w: phi[2],
                };
                let q = physics.rate(&x).unwrap();
                assert!(q > prev);
                prev = q;
            }
        }
    }

    #[test]
    fn steady_scenario_holds_target_with_constant_choke() {
        let s = steady_scenario();
        let obs = simulate_well(&"W".into(), &"A".into(), &s).unwrap();
        assert!(obs.len() > 100);
        let u0 = obs[0].u;
        for o in &obs {
            assert_relative_eq!(o.u, u0, max_relative = 1e-9);
            assert_relative_eq!(o.total_rate(), s.rate_target, max_relative = 1e-6);
        }
    }

    #[test]
    fn declining_pressure_opens_the_choke() {
        let spec = SyntheticConfig::default().assets[0].clone();
        for k in 0..20 {
            let mut rng = seed::rng(100 + k);
            let mut s = spec.sample(&mut rng, 0).unwrap();
            s.p2_noise = 0.0;
            s.sigma_mpfm = 0.0;
            s.sigma_sep = 0.0;
            s.target_step_days = 0.0;
            s.seed = k;
            let obs = simulate_well(&"W".into(), &"A".into(), &s).unwrap();
            for w in obs.windows(2) {
                assert!(w[1].u >= w[0].u, "scenario {k}: u decreased {} -> {}", w[0].u, w[1].u);
            }
            assert!(obs.last().unwrap().u > obs[0].u);
            assert!(obs.last().unwrap().p1 < obs[0].p1);
        }
    }

    #[test]
    fn mpfm_noise_level_matches_sigma() {
        let mut s = steady_scenario();
        s.sigma_mpfm = 0.05;
        s.mpfm_fraction = 1.0;
        s.horizon_days = 4000.0;
        s.cadence_days = 2.0;
        let obs = simulate_well(&"W".into(), &"A".into(), &s).unwrap();
        assert!(obs.len() >= 1000);
        let physics = s.physics();
        let rel: Vec<f64> = obs
            .iter()
            .map(|o| o.total_rate() / physics.rate(&o.features()).unwrap() - 1.0)
            .collect();
        let m = rel.iter().sum::<f64>() / rel.len() as f64;
        let sd = (rel.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rel.len() - 1) as f64).sqrt();
        assert!((0.04..=0.06).contains(&sd), "relative std {sd}");
    }

    #[test]
    fn noiseless_observations_are_a_function_of_features() {
        let mut s = steady_scenario();
        s.decline_rate = 0.05;
        let obs = simulate_well(&"W".into(), &"A".into(), &s).unwrap();
        let physics = s.physics();
        for o in &obs {
            assert_relative_eq!(o.total_rate(), physics.rate(&o.features()).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let mut s = steady_scenario();
        s.rate_target *= 1e3;
        assert!(matches!(
            simulate_well(&"W".into(), &"A".into(), &s),
            Err(SynthError::ScenarioInfeasible { .. })
        ));
    }

    #[test]
    fn single_fixed_well_matches_direct_simulation() {
        let s = steady_scenario();
        let asset = AssetId::from("A");
        let (obs, scenarios) = generate_asset(&asset, 1, &FixedScenario(s.clone()), 42).unwrap();
        let well = scenarios.keys().next().unwrap().clone();
        let direct = simulate_well(&well, &asset, &scenarios[&well]).unwrap();
        assert_eq!(obs, direct);
        assert_eq!(scenarios[&well].p_res0, s.p_res0);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset.observations(), b.dataset.observations());
        assert_eq!(a.dataset.n_wells(), 12);
        assert_eq!(a.dataset.assets().len(), 2);
        for o in a.dataset.observations() {
            o.validate().unwrap();
        }
    }

    #[test]
    fn assets_have_disjoint_pressure_ranges() {
        let g = generate(&SyntheticConfig::default()).unwrap();
        let ds = &g.dataset;
        let mut ranges = Vec::new();
        for wells in ds.assets().values() {
            let p: Vec<f64> = wells
                .iter()
                .flat_map(|w| ds.well(w).unwrap().iter().map(|&i| ds.obs(i).p1))
                .collect();
            let s = crate::stats::sorted_copy(&p);
            ranges.push((s[0], s[s.len() - 1]));
        }
        assert_eq!(ranges.len(), 2);
        assert!(ranges[0].1 < ranges[1].0 || ranges[1].1 < ranges[0].0, "{ranges:?}");
    }
}
