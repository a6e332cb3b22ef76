//! Linearize-and-solve iteration over the transform.
//!
//! Round `i` warps and normalizes the window at `τ⁽ⁱ⁾`, builds the reduced
//! Jacobian, solves the inner problem from a zero state and moves
//! `τ⁽ⁱ⁺¹⁾ = τ⁽ⁱ⁾ + Zβ̄`. The loop stops once consecutive objective values
//! differ by at most `outer_tol`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    center_constraint, jacobian, normalize, warp, AffineParams, CenterConstraint, GrayImage, Window,
};
use crate::inner::{solve, InnerConfig, InnerProblem, KktResiduals, SolverKind};
use crate::prox::{l1_norm, numerical_rank};

/// Relative threshold for the reported numerical rank of `X`.
pub const RANK_THRESHOLD: f64 = 1e-6;

/// Iteration cap for each grid point of [`init_search`].
pub const INIT_SEARCH_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    pub solver: SolverKind,
    pub inner: InnerConfig,
    /// `None` means `1/√width`.
    pub lambda: Option<f64>,
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Rotation grid for [`init_search`]; empty disables the search and
    /// starts from the identity.
    pub init_angles: Vec<f64>,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Sgs,
            inner: InnerConfig::default(),
            lambda: None,
            outer_tol: 1e-4,
            max_outer: 30,
            init_angles: Vec::new(),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        crate::error::positive("outer_tol", self.outer_tol)?;
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter {
                name: "max_outer",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if let Some(l) = self.lambda {
            crate::error::positive("lambda", l)?;
        }
        Ok(())
    }

    pub fn lambda_for(&self, window: &Window) -> f64 {
        self.lambda
            .unwrap_or_else(|| 1.0 / (window.width as f64).sqrt())
    }
}

/// Default initializer grid: 11 angles evenly spaced over ±25°.
pub fn default_init_angles() -> Vec<f64> {
    (0..11)
        .map(|k| (-25.0 + 5.0 * k as f64).to_radians())
        .collect()
}

/// Summary of one outer round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    /// 1-based.
    pub round: usize,
    pub iterations: usize,
    pub wall_time: f64,
    pub rank: usize,
    pub e_l1: f64,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub converged: bool,
    /// Full 6-parameter increment applied after this round.
    pub increment: AffineParams,
}

#[derive(Debug, Clone)]
pub struct RectifyResult {
    pub tau_initial: AffineParams,
    pub tau_final: AffineParams,
    pub x_final: DMatrix<f64>,
    pub e_final: DMatrix<f64>,
    pub per_round: Vec<RoundSummary>,
    pub total_time: f64,
    pub rounds: usize,
    /// Whether the objective stagnation test fired before `max_outer`.
    pub stagnated: bool,
}

impl RectifyResult {
    pub fn all_converged(&self) -> bool {
        self.per_round.iter().all(|r| r.converged)
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.per_round.iter().map(|r| r.objective).collect()
    }
}

/// Builds the inner problem at `tau`.
pub fn linearize(
    scene: &GrayImage,
    window: &Window,
    tau: &AffineParams,
    constraint: &CenterConstraint,
    lambda: f64,
) -> Result<InnerProblem> {
    let (d, _) = normalize(&warp(scene, tau, window)?)?;
    let j = jacobian(scene, tau, window, &constraint.null_basis)?;
    InnerProblem::new(d.into_matrix(), j, lambda)
}

/// Rectifies `window` of `scene`.
pub fn rectify(scene: &GrayImage, window: &Window, cfg: &OuterConfig) -> Result<RectifyResult> {
    cfg.validate()?;
    let tau0 = if cfg.init_angles.is_empty() {
        AffineParams::IDENTITY
    } else {
        init_search(scene, window, &cfg.init_angles, cfg)?
    };
    rectify_from(scene, window, tau0, cfg)
}

/// Rectifies starting from a given transform, skipping the initializer.
pub fn rectify_from(
    scene: &GrayImage,
    window: &Window,
    tau0: AffineParams,
    cfg: &OuterConfig,
) -> Result<RectifyResult> {
    cfg.validate()?;
    let start = Instant::now();
    let constraint = center_constraint(window);
    let lambda = cfg.lambda_for(window);

    let mut tau = tau0;
    let mut per_round: Vec<RoundSummary> = Vec::new();
    let mut last = None;
    let mut stagnated = false;
    for round in 1..=cfg.max_outer {
        let wrap = |source: Error| Error::Round {
            round,
            source: Box::new(source),
        };
        let problem = linearize(scene, window, &tau, &constraint, lambda).map_err(wrap)?;
        let res = solve(cfg.solver, &problem, &cfg.inner).map_err(wrap)?;
        let increment = constraint.expand(&res.state.dtau);
        tau = tau + increment;

        per_round.push(RoundSummary {
            round,
            iterations: res.iterations,
            wall_time: res.wall_time,
            rank: numerical_rank(&res.state.x, RANK_THRESHOLD).map_err(wrap)?,
            e_l1: l1_norm(&res.state.e),
            objective: res.objective,
            residuals: res.residuals,
            converged: res.converged,
            increment,
        });
        let f_prev = per_round.iter().rev().nth(1).map(|r| r.objective);
        last = Some(res.state);
        if let Some(prev) = f_prev {
            if (res.objective - prev).abs() <= cfg.outer_tol {
                stagnated = true;
                break;
            }
        }
    }

    let state = last.expect("max_outer >= 1");
    Ok(RectifyResult {
        tau_initial: tau0,
        tau_final: tau,
        x_final: state.x,
        e_final: state.e,
        rounds: per_round.len(),
        per_round,
        total_time: start.elapsed().as_secs_f64(),
        stagnated,
    })
}

/// Grid search over pure rotations: each angle gets a capped inner solve and
/// the one with the smallest `‖X‖* + λ‖E‖₁` wins (ties go to the earlier
/// angle).
pub fn init_search(
    scene: &GrayImage,
    window: &Window,
    angles: &[f64],
    cfg: &OuterConfig,
) -> Result<AffineParams> {
    if angles.is_empty() {
        return Err(Error::DegenerateInput("init_search needs at least one angle".into()));
    }
    let constraint = center_constraint(window);
    let lambda = cfg.lambda_for(window);
    let inner = InnerConfig {
        max_iter: INIT_SEARCH_ITERATIONS,
        ..cfg.inner
    };
    let scores: Vec<(f64, bool, Option<f64>)> = angles
        .par_iter()
        .map(|&theta| {
            let tau = AffineParams::rotation(theta);
            let feasible = warp(scene, &tau, window).is_ok();
            let f = linearize(scene, window, &tau, &constraint, lambda)
                .and_then(|p| solve(cfg.solver, &p, &inner))
                .ok()
                .map(|r| r.objective);
            (theta, feasible, f)
        })
        .collect();

    let best = scores
        .iter()
        .filter_map(|&(theta, _, f)| f.map(|f| (theta, f)))
        .fold(None, |best: Option<(f64, f64)>, (theta, f)| match best {
            Some((_, bf)) if bf <= f => best,
            _ => Some((theta, f)),
        });
    match best {
        Some((theta, _)) => Ok(AffineParams::rotation(theta)),
        None => Err(Error::NoFeasibleAngle {
            feasible: scores
                .iter()
                .filter(|s| s.1)
                .map(|s| s.0)
                .collect(),
        }),
    }
}
