//! Scaling studies over atom number, effective-decoherence formulas, regime
//! classification, and physical-unit estimates for an experimental run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::dynamics::{evolve, initial_state, IntegratorConfig};
use crate::entanglement::max_entanglement;
use crate::error::{Error, Result};
use crate::fockspace::{build_basis, TruncationSpec};
use crate::model::{detuning_strategy, effective_params, DetuningStrategy, ModelParams};
use crate::oracle::{characteristic_times, ideal_evolve, pure_state_negativity};

/// Which characteristic interaction time a sweep runs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTime {
    /// Omega t = pi / (4N).
    Cnot,
    /// Omega t = 1 / sqrt(2N).
    Macro,
}

impl TargetTime {
    pub fn omega_t(&self, n: usize) -> f64 {
        let t = characteristic_times(n);
        match self {
            TargetTime::Cnot => t.cnot_time,
            TargetTime::Macro => t.macro_time,
        }
    }
}

/// Axes of a scaling study: which N to run, how the laser detuning grows
/// with N, decay rates, and the target time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub n_values: Vec<usize>,
    pub strategy: DetuningStrategy,
    /// Base laser detuning in units of g (scaled by the strategy).
    pub base: f64,
    pub delta_c: f64,
    #[serde(default = "one")]
    pub big_g: f64,
    #[serde(default)]
    pub gamma_s: f64,
    #[serde(default)]
    pub gamma_c: f64,
    pub target: TargetTime,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

fn one() -> f64 {
    1.0
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(Error::Config("sweep.n_values must be non-empty".into()));
        }
        if self.n_values.windows(2).any(|w| w[1] <= w[0]) || self.n_values[0] == 0 {
            return Err(Error::Config("sweep.n_values must be positive and ascending".into()));
        }
        self.integrator.validate()
    }
}

/// One sweep result; on failure the E fields are NaN and status records why.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: usize,
    pub delta_l_over_g: f64,
    pub omega_big: f64,
    pub e_ideal_norm: f64,
    pub e_scheme_norm: f64,
    pub delta_e: f64,
    pub status: String,
}

fn run_row(plan: &SweepPlan, n: usize) -> Result<SweepRow> {
    let delta_l = detuning_strategy(plan.strategy, n, plan.base);
    let params = ModelParams {
        g: 1.0,
        big_g: plan.big_g,
        delta_c: plan.delta_c,
        delta_l,
        gamma_s: plan.gamma_s,
        gamma_c: plan.gamma_c,
    };
    params.validate()?;
    let eff = effective_params(&params, n)?;
    let omega_t = plan.target.omega_t(n);
    let t_final = omega_t / eff.omega_big;
    let table = build_basis(TruncationSpec::new(n))?;
    let rho0 = initial_state(&table);
    let record = evolve(&rho0, t_final, &plan.integrator, &params, &table, usize::MAX)?;
    let e_scheme = *record.entanglement.last().expect("non-empty record");
    let e_ideal = pure_state_negativity(&ideal_evolve(n, omega_t, false))?;
    let emax = max_entanglement(n);
    Ok(SweepRow {
        n,
        delta_l_over_g: delta_l,
        omega_big: eff.omega_big,
        e_ideal_norm: e_ideal / emax,
        e_scheme_norm: e_scheme / emax,
        delta_e: (e_ideal - e_scheme) / emax,
        status: "ok".into(),
    })
}

/// Runs the master equation for each N in the plan and compares with the
/// ideal interaction at the same dimensionless time. Rows run concurrently;
/// a failing row is reported in its status field, never dropped.
pub fn scaling_sweep(plan: &SweepPlan) -> Result<Vec<SweepRow>> {
    plan.validate()?;
    let mut rows: Vec<SweepRow> = plan
        .n_values
        .par_iter()
        .map(|&n| {
            run_row(plan, n).unwrap_or_else(|err| SweepRow {
                n,
                delta_l_over_g: detuning_strategy(plan.strategy, n, plan.base),
                omega_big: f64::NAN,
                e_ideal_norm: f64::NAN,
                e_scheme_norm: f64::NAN,
                delta_e: f64::NAN,
                status: format!("failed: {err}"),
            })
        })
        .collect();
    rows.sort_by_key(|r| r.n);
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("N,delta_l_over_g,omega,E_ideal_norm,E_scheme_norm,delta_E,status\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{}",
            r.n, r.delta_l_over_g, r.omega_big, r.e_ideal_norm, r.e_scheme_norm, r.delta_e, r.status
        )
        .expect("string write");
    }
    out
}

/// Effective ground-manifold decay rates (units of the input rates):
/// Gamma_s^eff = Gamma_s g^2 N / Delta_l^2 and
/// Gamma_c^eff = Gamma_c g^2 / Delta_l^2.
pub fn effective_decoherence(params: &ModelParams, n: usize) -> Result<(f64, f64)> {
    if params.delta_l == 0.0 {
        return Err(Error::ZeroDetuning("effective_decoherence needs nonzero delta_l"));
    }
    let ratio = params.g * params.g / (params.delta_l * params.delta_l);
    Ok((params.gamma_s * ratio * n as f64, params.gamma_c * ratio))
}

/// Experimental inputs in angular frequencies (rad/s) plus dimensionless
/// detunings in units of g.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Atom-cavity coupling G/hbar in rad/s.
    pub big_g: f64,
    /// Laser coupling g/hbar in rad/s.
    pub g: f64,
    /// Spontaneous emission rate in rad/s.
    pub gamma_s: f64,
    /// Cavity decay rate in rad/s.
    pub gamma_c: f64,
    pub atoms: usize,
    pub delta_c_over_g: f64,
    pub delta_l_over_g: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if self.big_g <= 0.0
            || self.g <= 0.0
            || self.gamma_s <= 0.0
            || self.gamma_c <= 0.0
            || self.atoms == 0
            || self.delta_c_over_g <= 0.0
            || self.delta_l_over_g <= 0.0
        {
            return Err(Error::Config("physical parameters must all be positive".into()));
        }
        Ok(())
    }
}

/// SI-unit predictions for an experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExperimentEstimates {
    /// Entangling rate in rad/s.
    pub omega: f64,
    /// Seconds to Omega t = pi/4N.
    pub t_cnot: f64,
    /// Seconds to Omega t = 1/sqrt(2N).
    pub t_macro: f64,
    /// Effective spontaneous-emission lifetime, seconds.
    pub inv_gamma_s_eff: f64,
    /// Effective cavity-decay lifetime, seconds.
    pub inv_gamma_c_eff: f64,
}

pub fn experiment_estimates(phys: &PhysicalParams) -> Result<ExperimentEstimates> {
    phys.validate()?;
    // Omega / g = (G/g)^2 / (2 (Dc/g) (Dl/g)^2), then scaled to rad/s by g
    let ratio = phys.big_g / phys.g;
    let omega = phys.g * ratio * ratio
        / (2.0 * phys.delta_c_over_g * phys.delta_l_over_g * phys.delta_l_over_g);
    let times = characteristic_times(phys.atoms);
    let dl2 = phys.delta_l_over_g * phys.delta_l_over_g;
    let gamma_s_eff = phys.gamma_s * phys.atoms as f64 / dl2;
    let gamma_c_eff = phys.gamma_c / dl2;
    Ok(ExperimentEstimates {
        omega,
        t_cnot: times.cnot_time / omega,
        t_macro: times.macro_time / omega,
        inv_gamma_s_eff: 1.0 / gamma_s_eff,
        inv_gamma_c_eff: 1.0 / gamma_c_eff,
    })
}

/// Interaction-time regimes of the entangled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    ContinuousVariable,
    Macroscopic,
    CatLike,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::ContinuousVariable => "continuous-variable",
            Regime::Macroscopic => "macroscopic",
            Regime::CatLike => "cat-like",
        })
    }
}

/// Classifies an interaction time: Omega t <= c1/N is continuous-variable,
/// <= c2/sqrt(N) is macroscopic, anything longer is cat-like.
pub fn scaling_regime_with(omega_t: f64, n: usize, c1: f64, c2: f64) -> Regime {
    let nf = n as f64;
    if omega_t <= c1 / nf {
        Regime::ContinuousVariable
    } else if omega_t <= c2 / nf.sqrt() {
        Regime::Macroscopic
    } else {
        Regime::CatLike
    }
}

pub fn scaling_regime(omega_t: f64, n: usize) -> Regime {
    scaling_regime_with(omega_t, n, std::f64::consts::FRAC_PI_2, 1.0)
}

/// Least-squares fit of y = a x^p on log-log axes; returns (p, a).
/// Used to extract the decay exponent of normalized entanglement with N in
/// the macroscopic regime, which is not pinned down analytically.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("power-law fit needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument("power-law fit needs positive data".into()));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("power-law fit needs distinct x values".into()));
    }
    let p = sxy / sxx;
    let a = (my - p * mx).exp();
    Ok((p, a))
}
