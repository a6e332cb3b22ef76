//! ADMM solvers for the linearized subproblem
//!
//! ```text
//! min ‖X‖* + λ‖E‖₁   s.t.  D + J·Δτ = X + E
//! ```
//!
//! with `D` the normalized warped window and `J` the reduced Jacobian. Three
//! schemes share the closed-form block updates:
//!
//! * [`SolverKind::Direct`] sweeps `X → Δτ → E` then takes a multiplier step.
//! * [`SolverKind::Sgs`] sweeps `X → Δτ → E → Δτ` (symmetric Gauss–Seidel
//!   over the `(E, Δτ)` group) then takes a multiplier step. One iteration
//!   equals one step of a two-block ADMM whose `(E, Δτ)` update carries the
//!   semi-proximal term `T = J(J*J)⁻¹J*` on `E`; see [`sgs_proximal_form_step`].
//! * [`SolverKind::SgsG`] is the same sweep in generalized form: updates read
//!   a relaxed shadow iterate that moves by `ρ(Ω − Ω̃)` each iteration.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{positive, Error, Result};
use crate::geometry::{AffineParams, JacobianOperator};
use crate::prox::{l1_norm, nuclear_norm, project_inf_ball, project_spectral_ball, shrink, svt};

/// Upper end of the admissible multiplier step-length interval, `(1+√5)/2`.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Entries above this magnitude are treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Linearized subproblem data.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    pub d_tau: DMatrix<f64>,
    pub jacobian: JacobianOperator,
    pub lambda: f64,
}

impl InnerProblem {
    /// Checks that `d_tau` has unit Frobenius norm and matches the Jacobian.
    pub fn new(d_tau: DMatrix<f64>, jacobian: JacobianOperator, lambda: f64) -> Result<Self> {
        let p = Self::new_unnormalized(d_tau, jacobian, lambda)?;
        let norm = p.d_tau.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "D∘τ must have unit Frobenius norm, got {norm}"
            )));
        }
        Ok(p)
    }

    /// Same as [`InnerProblem::new`] without the unit-norm requirement.
    pub fn new_unnormalized(
        d_tau: DMatrix<f64>,
        jacobian: JacobianOperator,
        lambda: f64,
    ) -> Result<Self> {
        positive("lambda", lambda)?;
        if d_tau.shape() != jacobian.shape() {
            return Err(Error::Dimension(format!(
                "D∘τ is {:?}, Jacobian maps to {:?}",
                d_tau.shape(),
                jacobian.shape()
            )));
        }
        Ok(Self {
            d_tau,
            jacobian,
            lambda,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.d_tau.shape()
    }

    /// `‖X‖* + λ‖E‖₁`.
    pub fn objective(&self, x: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<f64> {
        Ok(nuclear_norm(x)? + self.lambda * l1_norm(e))
    }

    /// `D + J·Δτ − X − E`.
    pub fn primal_residual(
        &self,
        x: &DMatrix<f64>,
        e: &DMatrix<f64>,
        dtau: &DVector<f64>,
    ) -> DMatrix<f64> {
        &self.d_tau + self.jacobian.apply(dtau) - x - e
    }

    /// Initial penalty `1/‖D‖_F` (1 for zero data).
    pub fn initial_sigma(&self) -> f64 {
        let n = self.d_tau.norm();
        if n > 0.0 {
            1.0 / n
        } else {
            1.0
        }
    }
}

/// Relaxed copies used by the generalized scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Shadow {
    pub x: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub dtau: DVector<f64>,
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub dtau: DVector<f64>,
    pub y: DMatrix<f64>,
    pub sigma: f64,
    pub shadow: Option<Shadow>,
}

impl SolverState {
    pub fn zeros(rows: usize, cols: usize, q: usize, sigma: f64) -> Self {
        Self {
            x: DMatrix::zeros(rows, cols),
            e: DMatrix::zeros(rows, cols),
            dtau: DVector::zeros(q),
            y: DMatrix::zeros(rows, cols),
            sigma,
            shadow: None,
        }
    }

    pub fn for_problem(problem: &InnerProblem) -> Self {
        let (r, c) = problem.shape();
        Self::zeros(r, c, problem.jacobian.dim(), problem.initial_sigma())
    }

    /// Shadow tuple, initialized from the current iterate if absent.
    pub fn shadow(&self) -> Shadow {
        self.shadow.clone().unwrap_or_else(|| Shadow {
            x: self.x.clone(),
            e: self.e.clone(),
            dtau: self.dtau.clone(),
            y: self.y.clone(),
        })
    }

    fn max_abs(&self) -> f64 {
        let m = |a: &DMatrix<f64>| a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        m(&self.x)
            .max(m(&self.e))
            .max(m(&self.y))
            .max(self.dtau.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
    }

    fn diverged(&self) -> bool {
        let bound = self.max_abs();
        !bound.is_finite() || bound > DIVERGENCE_BOUND || !self.sigma.is_finite()
    }
}

/// Normalized KKT residuals; `eta` is the maximum of the other four.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_x: f64,
    pub eta_e: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    Direct,
    Sgs,
    SgsG,
}

impl SolverKind {
    pub const ALL: [SolverKind; 3] = [SolverKind::Direct, SolverKind::Sgs, SolverKind::SgsG];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Sgs => "sgs",
            SolverKind::SgsG => "sgs-g",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(SolverKind::Direct),
            "sgs" => Ok(SolverKind::Sgs),
            "sgs-g" | "sgs_g" => Ok(SolverKind::SgsG),
            other => Err(format!("unknown solver `{other}` (expected direct, sgs or sgs-g)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    /// Multiplier step length for the direct and sGS schemes.
    pub xi: f64,
    /// Relaxation factor for the generalized scheme.
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty adaptation period in iterations; 0 disables adaptation.
    pub adapt_every: usize,
    /// Starting penalty; `None` means `1/‖D‖_F`.
    pub sigma0: Option<f64>,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            xi: 1.618,
            rho: 1.8,
            tol: 1e-3,
            max_iter: 1000,
            adapt_every: 10,
            sigma0: None,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < GOLDEN_RATIO) {
            return Err(Error::InvalidParameter {
                name: "xi",
                value: self.xi,
                reason: "step length must lie in (0, (1+√5)/2)",
            });
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                value: self.rho,
                reason: "relaxation factor must lie in (0, 2)",
            });
        }
        positive("tol", self.tol)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if let Some(s) = self.sigma0 {
            positive("sigma0", s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub state: SolverState,
    pub iterations: usize,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
}

/// `X = D_{1/σ}(D + J·Δτ − E + Y/σ)`.
pub fn step_x(state: &SolverState, problem: &InnerProblem) -> Result<DMatrix<f64>> {
    positive("sigma", state.sigma)?;
    let arg = &problem.d_tau + problem.jacobian.apply(&state.dtau) - &state.e
        + &state.y / state.sigma;
    svt(&arg, 1.0 / state.sigma)
}

/// `Δτ = −(J*J)⁻¹ J*(D − X − E + Y/σ)` with `E = e_used` and `X`, `Y`, `σ`
/// from `state`.
pub fn step_dtau(state: &SolverState, problem: &InnerProblem, e_used: &DMatrix<f64>) -> DVector<f64> {
    let rhs = &problem.d_tau - &state.x - e_used + &state.y / state.sigma;
    -problem.jacobian.gram_solve(&problem.jacobian.adjoint(&rhs))
}

/// `E = S_{λ/σ}(D + J·Δτ − X + Y/σ)` with `Δτ = dtau_used`.
pub fn step_e(
    state: &SolverState,
    problem: &InnerProblem,
    dtau_used: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    positive("sigma", state.sigma)?;
    let arg = &problem.d_tau + problem.jacobian.apply(dtau_used) - &state.x
        + &state.y / state.sigma;
    let mu = problem.lambda / state.sigma;
    positive("lambda/sigma", mu)?;
    Ok(arg.map(|v| shrink(v, mu)))
}

/// Primal feasibility `max(‖D + JΔτ − X − E‖_F/‖D‖_F, ‖A_t Δτ‖∞)`.
///
/// `constraint` carries `A_t` and the full 6-parameter increment; it is zero
/// whenever the increment was built from the constraint's null basis.
fn eta_primal(
    state: &SolverState,
    problem: &InnerProblem,
    constraint: Option<(&SMatrix<f64, 2, 6>, &AffineParams)>,
) -> f64 {
    let dnorm = problem.d_tau.norm();
    let scale = if dnorm > 0.0 { dnorm } else { 1.0 };
    let feas = problem.primal_residual(&state.x, &state.e, &state.dtau).norm() / scale;
    let center = constraint.map_or(0.0, |(a_t, p)| {
        let d = a_t * nalgebra::SVector::<f64, 6>::from_column_slice(&p.0);
        d.amax()
    });
    feas.max(center)
}

fn eta_dual(state: &SolverState, problem: &InnerProblem) -> f64 {
    problem.jacobian.adjoint(&state.y).norm()
}

fn eta_complementarity(state: &SolverState, problem: &InnerProblem) -> Result<(f64, f64)> {
    let y = &state.y;
    let yn = y.norm();
    let px = project_spectral_ball(&(y + &state.x), 1.0)?;
    let eta_x = (y - px).norm() / (1.0 + yn + state.x.norm());
    let pe = project_inf_ball(&(y + &state.e), problem.lambda)?;
    let eta_e = (y - pe).norm() / (1.0 + yn + state.e.norm());
    Ok((eta_x, eta_e))
}

/// Normalized KKT residuals of `(X, E, Δτ; Y)`.
pub fn kkt_residuals(
    state: &SolverState,
    problem: &InnerProblem,
    constraint: Option<(&SMatrix<f64, 2, 6>, &AffineParams)>,
) -> Result<KktResiduals> {
    let eta_p = eta_primal(state, problem, constraint);
    let eta_d = eta_dual(state, problem);
    let (eta_x, eta_e) = eta_complementarity(state, problem)?;
    Ok(KktResiduals {
        eta_p,
        eta_d,
        eta_x,
        eta_e,
        eta: eta_p.max(eta_d).max(eta_x).max(eta_e),
    })
}

/// Residual-balancing penalty update: ×1.25 when `η_P/η_D ≥ 5`, ×0.8 when
/// `η_P/η_D ≤ 1/5`. A zero `η_D` counts as an infinite ratio.
pub fn adapt_sigma(sigma: f64, eta_p: f64, eta_d: f64) -> f64 {
    let ratio = if eta_d == 0.0 {
        f64::INFINITY
    } else {
        eta_p / eta_d
    };
    if ratio >= 5.0 {
        1.25 * sigma
    } else if ratio <= 0.2 {
        0.8 * sigma
    } else {
        sigma
    }
}

/// One directly-extended ADMM iteration at fixed σ: `X → Δτ → E → Y`.
pub fn direct_iteration(state: &SolverState, problem: &InnerProblem, xi: f64) -> Result<SolverState> {
    let mut next = state.clone();
    next.x = step_x(state, problem)?;
    next.dtau = step_dtau(&next, problem, &state.e);
    next.e = step_e(&next, problem, &next.dtau)?;
    next.y = &state.y + problem.primal_residual(&next.x, &next.e, &next.dtau) * (xi * state.sigma);
    Ok(next)
}

/// One sGS-ADMM iteration at fixed σ: `X → Δτ^{k+½} → E → Δτ → Y`.
pub fn sgs_iteration(state: &SolverState, problem: &InnerProblem, xi: f64) -> Result<SolverState> {
    let mut next = state.clone();
    next.x = step_x(state, problem)?;
    let half = step_dtau(&next, problem, &state.e);
    next.e = step_e(&next, problem, &half)?;
    next.dtau = step_dtau(&next, problem, &next.e);
    next.y = &state.y + problem.primal_residual(&next.x, &next.e, &next.dtau) * (xi * state.sigma);
    Ok(next)
}

/// `T` on the sparse block: `v ↦ J(J*J)⁻¹J*v`.
pub fn semi_proximal_operator(jacobian: &JacobianOperator, v: &DMatrix<f64>) -> DMatrix<f64> {
    jacobian.range_projection(v)
}

/// One iteration of the two-block semi-proximal ADMM
///
/// ```text
/// X      = argmin L_σ(X, E^k, Δτ^k; Y^k)
/// (E,Δτ) = argmin L_σ(X, E, Δτ; Y^k) + σ/2‖(E,Δτ) − (E^k,Δτ^k)‖²_T
/// Y      = Y^k + ξσ(D + JΔτ − X − E)
/// ```
///
/// The joint step is solved in closed form rather than by a Gauss–Seidel
/// sweep. Eliminating `Δτ` leaves `σ/2‖(I−P)(W − E)‖²` with `P` the projector
/// onto `range(J)` and `W = D − X + Y/σ`; adding `σ/2‖P(E − E^k)‖²` completes
/// the square around `(I−P)W + P·E^k`, which is then soft-thresholded.
pub fn sgs_proximal_form_step(
    state: &SolverState,
    problem: &InnerProblem,
    xi: f64,
) -> Result<SolverState> {
    positive("sigma", state.sigma)?;
    let sigma = state.sigma;
    let mut next = state.clone();
    next.x = step_x(state, problem)?;

    let w = &problem.d_tau - &next.x + &state.y / sigma;
    let pw = semi_proximal_operator(&problem.jacobian, &w);
    let pe = semi_proximal_operator(&problem.jacobian, &state.e);
    let center = w - pw + pe;
    let mu = problem.lambda / sigma;
    next.e = center.map(|v| shrink(v, mu));

    // minimizer over Δτ for the new E: J*J·Δτ = −J*(W − E)
    let rhs = &problem.d_tau - &next.x - &next.e + &state.y / sigma;
    next.dtau = -problem.jacobian.gram_solve(&problem.jacobian.adjoint(&rhs));

    next.y = &state.y + problem.primal_residual(&next.x, &next.e, &next.dtau) * (xi * sigma);
    Ok(next)
}

/// One generalized sGS-ADMM iteration at fixed σ.
///
/// Reads the shadow tuple `Ω̃ = (X̃, Δτ̃, Ẽ, Ỹ)`:
/// `Δτ^{k+½} → E → Δτ → Y = Ỹ + σ(D + JΔτ − X̃ − E) → X`, then relaxes
/// `Ω̃ ← Ω̃ + ρ(Ω − Ω̃)`. The returned state's plain fields hold `Ω^{k+1}`.
pub fn sgs_g_iteration(state: &SolverState, problem: &InnerProblem, rho: f64) -> Result<SolverState> {
    positive("sigma", state.sigma)?;
    let sigma = state.sigma;
    let sh = state.shadow();
    let base = SolverState {
        x: sh.x.clone(),
        e: sh.e.clone(),
        dtau: sh.dtau.clone(),
        y: sh.y.clone(),
        sigma,
        shadow: None,
    };

    let half = step_dtau(&base, problem, &sh.e);
    let e = step_e(&base, problem, &half)?;
    let dtau = step_dtau(&base, problem, &e);
    let y = &sh.y + problem.primal_residual(&sh.x, &e, &dtau) * sigma;
    let fresh = SolverState {
        x: sh.x.clone(),
        e,
        dtau,
        y,
        sigma,
        shadow: None,
    };
    let x = step_x(&fresh, problem)?;

    let relax = |old: &DMatrix<f64>, new: &DMatrix<f64>| old + (new - old) * rho;
    let shadow = Shadow {
        x: relax(&sh.x, &x),
        e: relax(&sh.e, &fresh.e),
        dtau: &sh.dtau + (&fresh.dtau - &sh.dtau) * rho,
        y: relax(&sh.y, &fresh.y),
    };
    Ok(SolverState {
        x,
        e: fresh.e,
        dtau: fresh.dtau,
        y: fresh.y,
        sigma,
        shadow: Some(shadow),
    })
}

/// Runs one of the three schemes from the zero state.
pub fn solve(kind: SolverKind, problem: &InnerProblem, config: &InnerConfig) -> Result<InnerResult> {
    let state = SolverState::for_problem(problem);
    solve_from(kind, problem, config, state)
}

pub fn solve_direct_admm(problem: &InnerProblem, config: &InnerConfig) -> Result<InnerResult> {
    solve(SolverKind::Direct, problem, config)
}

pub fn solve_sgs_admm(problem: &InnerProblem, config: &InnerConfig) -> Result<InnerResult> {
    solve(SolverKind::Sgs, problem, config)
}

pub fn solve_sgs_admm_g(problem: &InnerProblem, config: &InnerConfig) -> Result<InnerResult> {
    solve(SolverKind::SgsG, problem, config)
}

/// Runs a scheme from a given starting state.
///
/// Every iteration evaluates the cheap residuals `η_P` and `η_D`; the two
/// SVD-backed complementarity residuals are evaluated only once both cheap
/// ones are below tolerance, so the reported iteration count is exact. The
/// penalty is rebalanced every `adapt_every` iterations without rescaling
/// the multiplier.
pub fn solve_from(
    kind: SolverKind,
    problem: &InnerProblem,
    config: &InnerConfig,
    mut state: SolverState,
) -> Result<InnerResult> {
    config.validate()?;
    let start = Instant::now();
    state.sigma = config.sigma0.unwrap_or(state.sigma);
    positive("sigma", state.sigma)?;

    let mut residuals = None;
    let mut iterations = 0;
    for k in 1..=config.max_iter {
        state = match kind {
            SolverKind::Direct => direct_iteration(&state, problem, config.xi)?,
            SolverKind::Sgs => sgs_iteration(&state, problem, config.xi)?,
            SolverKind::SgsG => sgs_g_iteration(&state, problem, config.rho)?,
        };
        iterations = k;
        if state.diverged() {
            return Err(Error::Divergence {
                solver: kind.name(),
                iteration: k,
            });
        }

        let eta_p = eta_primal(&state, problem, None);
        let eta_d = eta_dual(&state, problem);
        if eta_p < config.tol && eta_d < config.tol {
            let (eta_x, eta_e) = eta_complementarity(&state, problem)?;
            let eta = eta_p.max(eta_d).max(eta_x).max(eta_e);
            if eta < config.tol {
                residuals = Some(KktResiduals {
                    eta_p,
                    eta_d,
                    eta_x,
                    eta_e,
                    eta,
                });
                break;
            }
        }
        if config.adapt_every > 0 && k % config.adapt_every == 0 {
            state.sigma = adapt_sigma(state.sigma, eta_p, eta_d);
        }
    }

    let converged = residuals.is_some();
    let residuals = match residuals {
        Some(r) => r,
        None => kkt_residuals(&state, problem, None)?,
    };
    let objective = problem.objective(&state.x, &state.e)?;
    Ok(InnerResult {
        state,
        iterations,
        objective,
        residuals,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_problem(seed: u64, size: usize, q: usize) -> InnerProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = random_matrix(&mut rng, size * size, q) * 0.1;
        let d = random_matrix(&mut rng, size, size);
        let d = &d / d.norm();
        let j = JacobianOperator::from_basis(basis, size, size).unwrap();
        InnerProblem::new(d, j, 1.0 / (size as f64).sqrt()).unwrap()
    }

    fn random_state(seed: u64, problem: &InnerProblem) -> SolverState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = problem.shape();
        SolverState {
            x: random_matrix(&mut rng, r, c) * 0.2,
            e: random_matrix(&mut rng, r, c) * 0.05,
            dtau: DVector::from_fn(problem.jacobian.dim(), |_, _| rng.gen_range(-0.5..0.5)),
            y: random_matrix(&mut rng, r, c) * 0.1,
            sigma: rng.gen_range(0.5..5.0),
            shadow: None,
        }
    }

    fn orthonormal_jacobian(size: usize, q: usize, seed: u64) -> JacobianOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_matrix(&mut rng, size * size, q);
        let qr = raw.qr();
        JacobianOperator::from_basis(qr.q(), size, size).unwrap()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn step_x_shrinks_rank_one_data() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let d = &u * v.transpose();
        let j = JacobianOperator::from_basis(DMatrix::from_element(6, 1, 0.1), 2, 3).unwrap();
        let p = InnerProblem::new(d.clone(), j, 0.5).unwrap();
        let mut s = SolverState::zeros(2, 3, 1, 4.0);
        let x = step_x(&s, &p).unwrap();
        // s = 1, σ = 4
        assert!(max_abs(&(x - &d * (1.0 - 0.25))) < 1e-14);

        s.y = -&p.d_tau * s.sigma;
        assert_eq!(max_abs(&step_x(&s, &p).unwrap()), 0.0);
    }

    #[test]
    fn step_x_matches_independent_assembly() {
        let p = random_problem(11, 6, 3);
        let s = random_state(11, &p);
        let arg = &p.d_tau + DMatrix::from_vec(6, 6, (p.jacobian.basis() * &s.dtau).data.into())
            - &s.e
            + &s.y * (1.0 / s.sigma);
        let oracle = svt(&arg, 1.0 / s.sigma).unwrap();
        assert!(max_abs(&(step_x(&s, &p).unwrap() - oracle)) < 1e-12);
    }

    #[test]
    fn step_dtau_examples() {
        let size = 5;
        let j = orthonormal_jacobian(size, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_matrix(&mut rng, size, size);
        let d = &d / d.norm();
        let p = InnerProblem::new(d, j, 0.3).unwrap();
        let s = random_state(4, &p);
        let beta = step_dtau(&s, &p, &s.e);
        let rhs = &p.d_tau - &s.x - &s.e + &s.y / s.sigma;
        // J*J = I
        assert!((beta + p.jacobian.adjoint(&rhs)).norm() < 1e-12);

        // right-hand side orthogonal to range(J)
        let mut s2 = s.clone();
        let orth = &rhs - p.jacobian.range_projection(&rhs);
        s2.y = (orth - (&p.d_tau - &s.x - &s.e)) * s.sigma;
        assert!(step_dtau(&s2, &p, &s.e).norm() < 1e-12);
    }

    #[test]
    fn step_dtau_solves_normal_equations() {
        let p = random_problem(13, 6, 4);
        let s = random_state(13, &p);
        let beta = step_dtau(&s, &p, &s.e);
        let rhs = p
            .jacobian
            .adjoint(&(&p.d_tau - &s.x - &s.e + &s.y / s.sigma));
        let r = p.jacobian.gram() * &beta + &rhs;
        assert!(r.norm() < 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn step_e_examples() {
        let p = random_problem(17, 5, 2);
        let mut s = random_state(17, &p);
        // everything under threshold
        s.sigma = 1e-3;
        let small = step_e(&s, &p, &DVector::zeros(2)).unwrap();
        let arg = &p.d_tau - &s.x + &s.y / s.sigma;
        assert!(max_abs(&arg) < p.lambda / s.sigma);
        assert_eq!(max_abs(&small), 0.0);
        let mut tiny = s.clone();
        tiny.sigma = 1.0;
        let tiny_p = InnerProblem::new(p.d_tau.clone(), p.jacobian.clone(), 1e-15).unwrap();
        let e = step_e(&tiny, &tiny_p, &tiny.dtau).unwrap();
        let arg = &tiny_p.d_tau + tiny_p.jacobian.apply(&tiny.dtau) - &tiny.x + &tiny.y;
        assert!(max_abs(&(e - arg)) <= 1e-15 + 1e-15);

        let s = random_state(18, &p);
        let arg = &p.d_tau + p.jacobian.apply(&s.dtau) - &s.x + &s.y / s.sigma;
        let oracle = crate::prox::soft_threshold(&arg, p.lambda / s.sigma).unwrap();
        assert_eq!(step_e(&s, &p, &s.dtau).unwrap(), oracle);
    }

    #[test]
    fn kkt_of_zero_state_on_zero_problem() {
        let j = orthonormal_jacobian(4, 2, 1);
        let p = InnerProblem::new_unnormalized(DMatrix::zeros(4, 4), j, 0.5).unwrap();
        let s = SolverState::for_problem(&p);
        let r = kkt_residuals(&s, &p, None).unwrap();
        assert_eq!(r, KktResiduals::default());
    }

    #[test]
    fn dual_residual_vanishes_for_multiplier_orthogonal_to_range() {
        let p = random_problem(19, 5, 3);
        let mut s = random_state(19, &p);
        s.y = &s.y - p.jacobian.range_projection(&s.y);
        assert!(kkt_residuals(&s, &p, None).unwrap().eta_d < 1e-14);
    }

    #[test]
    fn kkt_matches_formula_by_formula_evaluation() {
        let p = random_problem(19, 6, 4);
        let s = random_state(20, &p);
        let r = kkt_residuals(&s, &p, None).unwrap();

        let resid = &p.d_tau + p.jacobian.apply(&s.dtau) - &s.x - &s.e;
        let eta_p = resid.norm() / p.d_tau.norm();
        let jy = p.jacobian.basis().transpose() * DVector::from_column_slice(s.y.as_slice());
        let eta_d = jy.norm();
        // spectral projection via symmetric eigen of (Y+X)*(Y+X)
        let yx = &s.y + &s.x;
        let eig = nalgebra::SymmetricEigen::new(yx.transpose() * &yx);
        let mut shrink_right = DMatrix::zeros(6, 6);
        for k in 0..6 {
            let sv = eig.eigenvalues[k].max(0.0).sqrt();
            let f = if sv > 1.0 { 1.0 / sv } else { 1.0 };
            let v = eig.eigenvectors.column(k);
            shrink_right += v * v.transpose() * f;
        }
        let proj = &yx * shrink_right;
        let eta_x = (&s.y - proj).norm() / (1.0 + s.y.norm() + s.x.norm());
        let ye = &s.y + &s.e;
        let clamp = ye.map(|v| v.max(-p.lambda).min(p.lambda));
        let eta_e = (&s.y - clamp).norm() / (1.0 + s.y.norm() + s.e.norm());

        assert!((r.eta_p - eta_p).abs() < 1e-12);
        assert!((r.eta_d - eta_d).abs() < 1e-12);
        assert!((r.eta_x - eta_x).abs() < 1e-10);
        assert!((r.eta_e - eta_e).abs() < 1e-12);
        assert_eq!(r.eta, r.eta_p.max(r.eta_d).max(r.eta_x).max(r.eta_e));
    }

    #[test]
    fn kkt_includes_center_displacement() {
        let p = random_problem(21, 4, 2);
        let s = SolverState::for_problem(&p);
        let mut a_t = SMatrix::<f64, 2, 6>::zeros();
        a_t[(0, 4)] = 1.0;
        a_t[(1, 5)] = 1.0;
        let full = AffineParams::translation(3.0, -4.0);
        let r = kkt_residuals(&s, &p, Some((&a_t, &full))).unwrap();
        assert_eq!(r.eta_p, 4.0);
    }

    #[test]
    fn adapt_sigma_rule() {
        assert_eq!(adapt_sigma(1.0, 6.0, 1.0), 1.25);
        assert_eq!(adapt_sigma(1.0, 1.0, 1.0), 1.0);
        assert_eq!(adapt_sigma(1.0, 0.1, 1.0), 0.8);
        assert_eq!(adapt_sigma(2.0, 0.3, 0.0), 2.5);
    }

    #[test]
    fn zero_data_converges_immediately() {
        for kind in SolverKind::ALL {
            let j = orthonormal_jacobian(6, 3, 9);
            let p = InnerProblem::new_unnormalized(DMatrix::zeros(6, 6), j, 0.4).unwrap();
            let r = solve(kind, &p, &InnerConfig::default()).unwrap();
            assert!(r.converged, "{kind}");
            assert_eq!(r.iterations, 1);
            assert_eq!(max_abs(&r.state.x), 0.0);
            assert_eq!(max_abs(&r.state.e), 0.0);
            assert_eq!(r.state.dtau.norm(), 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = InnerConfig::default();
        assert!(c.validate().is_ok());
        c.xi = 2.0;
        assert!(c.validate().is_err());
        c.xi = 1.618;
        c.rho = 2.0;
        assert!(c.validate().is_err());
        c.rho = 1.8;
        c.tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn semi_proximal_operator_is_a_projector() {
        let j = orthonormal_jacobian(5, 3, 4);
        let w = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let jw = j.apply(&w);
        assert!(max_abs(&(semi_proximal_operator(&j, &jw) - &jw)) < 1e-12);

        let p = random_problem(6, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_matrix(&mut rng, 5, 5);
        let tv = semi_proximal_operator(&p.jacobian, &v);
        let ttv = semi_proximal_operator(&p.jacobian, &tv);
        assert!(max_abs(&(ttv - &tv)) < 1e-10);
    }

    #[test]
    fn proximal_form_minimizes_its_joint_objective() {
        let p = random_problem(31, 5, 3);
        let s = random_state(31, &p);
        let next = sgs_proximal_form_step(&s, &p, 1.0).unwrap();
        let sigma = s.sigma;
        let joint = |e: &DMatrix<f64>, dtau: &DVector<f64>| {
            let r = p.primal_residual(&next.x, e, dtau);
            let de = e - &s.e;
            p.lambda * l1_norm(e)
                + s.y.dot(&r)
                + 0.5 * sigma * r.norm_squared()
                + 0.5 * sigma * de.dot(&semi_proximal_operator(&p.jacobian, &de))
        };
        let base = joint(&next.e, &next.dtau);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..500 {
            let de = random_matrix(&mut rng, 5, 5) * rng.gen_range(0.0..1e-2);
            let db = DVector::from_fn(3, |_, _| rng.gen_range(-1e-2..1e-2));
            assert!(base <= joint(&(&next.e + de), &(&next.dtau + db)) + 1e-12);
        }
    }

    #[test]
    fn sgs_matches_proximal_form_on_random_states() {
        let p = random_problem(40, 8, 4);
        for seed in 0..20 {
            let s = random_state(100 + seed, &p);
            let a = sgs_iteration(&s, &p, 1.618).unwrap();
            let b = sgs_proximal_form_step(&s, &p, 1.618).unwrap();
            assert!(max_abs(&(&a.x - &b.x)) < 1e-10);
            assert!(max_abs(&(&a.e - &b.e)) < 1e-10);
            assert!(max_abs(&(&a.y - &b.y)) < 1e-10);
            assert!((&a.dtau - &b.dtau).amax() < 1e-10);
        }
    }

    #[test]
    fn multiplier_step_is_scaled_primal_residual() {
        let p = random_problem(50, 6, 3);
        let s = random_state(50, &p);
        let xi = 1.3;
        for (next, step) in [
            (direct_iteration(&s, &p, xi).unwrap(), xi),
            (sgs_iteration(&s, &p, xi).unwrap(), xi),
        ] {
            let r = p.primal_residual(&next.x, &next.e, &next.dtau);
            assert!(max_abs(&(&next.y - &s.y - r * (step * s.sigma))) < 1e-13);
        }
        let g = sgs_g_iteration(&s, &p, 1.8).unwrap();
        let r = p.primal_residual(&s.x, &g.e, &g.dtau);
        assert!(max_abs(&(&g.y - &s.y - r * s.sigma)) < 1e-13);
    }

    #[test]
    fn generalized_with_unit_relaxation_tracks_sgs() {
        let p = random_problem(60, 6, 3);
        let mut sgs = random_state(60, &p);
        // The generalized sweep starts from the X block, so seed its shadow
        // with the X that sGS produces in its first iteration.
        let first_x = step_x(&sgs, &p).unwrap();
        let mut gen = sgs.clone();
        gen.x = first_x;
        gen.shadow = None;
        for _ in 0..25 {
            let next_sgs = sgs_iteration(&sgs, &p, 1.0).unwrap();
            let next_gen = sgs_g_iteration(&gen, &p, 1.0).unwrap();
            assert!(max_abs(&(&next_sgs.e - &next_gen.e)) < 1e-10);
            assert!(max_abs(&(&next_sgs.y - &next_gen.y)) < 1e-10);
            assert!((&next_sgs.dtau - &next_gen.dtau).amax() < 1e-10);
            // the generalized X runs one step ahead
            let ahead = step_x(&next_sgs, &p).unwrap();
            assert!(max_abs(&(ahead - &next_gen.x)) < 1e-10);
            sgs = next_sgs;
            gen = next_gen;
        }
    }

    #[test]
    fn feasibility_at_convergence() {
        let p = random_problem(70, 8, 3);
        for kind in SolverKind::ALL {
            let r = solve(kind, &p, &InnerConfig::default()).unwrap();
            assert!(r.converged, "{kind}: eta {}", r.residuals.eta);
            let feas = p.primal_residual(&r.state.x, &r.state.e, &r.state.dtau).norm();
            assert!(feas < 2e-3, "{kind}: {feas}");
            assert!(r.residuals.eta < 1e-3);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let p = random_problem(80, 8, 4);
        for kind in SolverKind::ALL {
            let a = solve(kind, &p, &InnerConfig::default()).unwrap();
            let b = solve(kind, &p, &InnerConfig::default()).unwrap();
            assert_eq!(a.iterations, b.iterations);
            assert_eq!(a.state, b.state);
            assert_eq!(a.objective, b.objective);
        }
    }

    #[test]
    fn sigma_stays_positive_under_any_schedule() {
        let mut sigma = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let a: f64 = rng.gen_range(0.0..10.0);
            let b: f64 = rng.gen_range(0.0..10.0);
            sigma = adapt_sigma(sigma, a, b);
            assert!(sigma > 0.0);
        }
    }
}
