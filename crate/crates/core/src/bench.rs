//! Synthetic textures, deformation and corruption, and the solver comparison
//! harness.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{AffineParams, GrayImage, Window};
use crate::inner::SolverKind;
use crate::outer::{rectify_from, OuterConfig, RectifyResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Stripes,
    Checkerboard,
    LowRankProduct,
    GridLines,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::Stripes,
        TextureKind::Checkerboard,
        TextureKind::LowRankProduct,
        TextureKind::GridLines,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Stripes => "stripes",
            TextureKind::Checkerboard => "checkerboard",
            TextureKind::LowRankProduct => "low_rank_product",
            TextureKind::GridLines => "grid_lines",
        }
    }

    /// Rank the pattern has by construction, or `None` if any rank works.
    pub fn fixed_rank(self) -> Option<usize> {
        match self {
            TextureKind::Stripes => Some(1),
            TextureKind::Checkerboard | TextureKind::GridLines => Some(2),
            TextureKind::LowRankProduct => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub kind: TextureKind,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub seed: u64,
}

impl TextureSpec {
    pub fn new(kind: TextureKind, rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        Self {
            kind,
            rows,
            cols,
            rank,
            seed,
        }
    }

    /// Spec with the kind's natural rank (3 for products).
    pub fn natural(kind: TextureKind, rows: usize, cols: usize, seed: u64) -> Self {
        Self::new(kind, rows, cols, kind.fixed_rank().unwrap_or(3), seed)
    }
}

/// Shortest pattern period in pixels. Finer patterns make the bilinear
/// resampling bias toward zooming in strong enough to keep the outer loop
/// drifting.
pub const MIN_PERIOD: f64 = 13.0;

/// Periodic profile in `[-1, 1]`: a square wave with edges softened over a
/// couple of pixels, so bilinear resampling stays accurate.
fn profile(len: usize, period: f64, phase: f64) -> Vec<f64> {
    const SHARPNESS: f64 = 1.5;
    (0..len)
        .map(|i| {
            let t = std::f64::consts::TAU * (i as f64 + phase) / period;
            (SHARPNESS * t.sin()).tanh() / SHARPNESS.tanh()
        })
        .collect()
}

/// Generates a texture whose numerical rank is exactly `spec.rank`, with
/// intensities in `[0, 1]`.
///
/// Pattern periods scale with the texture size (about a third of the shorter
/// side, never below [`MIN_PERIOD`] pixels).
pub fn gen_texture(spec: &TextureSpec) -> Result<GrayImage> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows < 4 || cols < 4 {
        return Err(Error::DegenerateInput(format!(
            "texture must be at least 4x4, got {rows}x{cols}"
        )));
    }
    let infeasible = Error::InfeasibleRank {
        kind: spec.kind.name(),
        rank: spec.rank,
    };
    if spec.rank == 0 || spec.rank > rows.min(cols) {
        return Err(infeasible);
    }
    if let Some(r) = spec.kind.fixed_rank() {
        if r != spec.rank {
            return Err(infeasible);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = (rows.min(cols) as f64 / 3.0).max(MIN_PERIOD);
    let draw = |rng: &mut ChaCha8Rng, len: usize| {
        let period = base * rng.gen_range(0.85..1.15);
        profile(len, period, rng.gen_range(0.0..period))
    };
    let m = match spec.kind {
        TextureKind::Stripes => {
            let s = draw(&mut rng, cols);
            DMatrix::from_fn(rows, cols, |_, c| 0.5 + 0.35 * s[c])
        }
        TextureKind::Checkerboard => {
            let a = draw(&mut rng, rows);
            let b = draw(&mut rng, cols);
            DMatrix::from_fn(rows, cols, |r, c| 0.5 + 0.35 * a[r] * b[c])
        }
        TextureKind::GridLines => {
            // soft union of horizontal and vertical bands: 1 − (1−h)(1−v)
            let narrow = |p: Vec<f64>| -> Vec<f64> { p.iter().map(|x| ((x - 0.4) / 0.6).max(0.0)).collect() };
            let h = narrow(draw(&mut rng, rows));
            let v = narrow(draw(&mut rng, cols));
            DMatrix::from_fn(rows, cols, |r, c| {
                0.2 + 0.7 * (1.0 - (1.0 - h[r]) * (1.0 - v[c]))
            })
        }
        TextureKind::LowRankProduct => {
            let mut factor = |len: usize| {
                let mut f = DMatrix::zeros(len, spec.rank);
                for k in 0..spec.rank {
                    let p = draw(&mut rng, len);
                    let weight = rng.gen_range(0.5..1.0);
                    for i in 0..len {
                        f[(i, k)] = weight * (0.55 + 0.45 * p[i]);
                    }
                }
                f
            };
            let a = factor(rows);
            let b = factor(cols);
            let p = a * b.transpose();
            let top = p.max();
            p / top
        }
    };
    Ok(GrayImage::new(m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    /// Fraction of the texture's pixel count to replace, in `[0, 1)`.
    pub fraction: f64,
    /// Range of the replacement values.
    pub amplitude: (f64, f64),
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self {
            fraction: 0.0,
            amplitude: (0.0, 1.0),
            seed: 0,
        }
    }

    pub fn uniform(fraction: f64, seed: u64) -> Self {
        Self {
            fraction,
            amplitude: (0.0, 1.0),
            seed,
        }
    }
}

/// A deformed, corrupted scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Deformed {
    pub scene: GrayImage,
    /// Axis-aligned window over the canvas region where the texture sits.
    pub window: Window,
    /// Rotation applied to the texture, radians.
    pub angle: f64,
    /// Corrupted canvas pixels (`true` where replaced).
    pub mask: DMatrix<bool>,
}

impl Deformed {
    /// The transform that maps the window back onto the undeformed texture.
    pub fn rectifying_tau(&self) -> AffineParams {
        AffineParams::rotation(-self.angle)
    }

    pub fn corrupted_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Smallest canvas margin that contains the texture rotated by `angle`, with
/// one extra pixel for gradient stencils.
pub fn required_margin(rows: usize, cols: usize, angle: f64) -> usize {
    let (s, c) = (angle.sin().abs(), angle.cos().abs());
    let hw = 0.5 * cols as f64;
    let hh = 0.5 * rows as f64;
    let ext_x = hw * c + hh * s;
    let ext_y = hw * s + hh * c;
    let need = (ext_x - hw).max(ext_y - hh).max(0.0);
    need.ceil() as usize + 2
}

/// Reflects `x` into `[0, len − 1]` about the end pixels.
fn mirror(x: f64, len: usize) -> f64 {
    let last = (len - 1) as f64;
    let t = x.rem_euclid(2.0 * last);
    if t > last {
        2.0 * last - t
    } else {
        t
    }
}

/// Rotates `texture` by `angle` about its center into a canvas padded by
/// `margin` pixels on each side, then replaces `round(fraction·rows·cols)`
/// distinct pixels inside the texture's axis-aligned block with uniform
/// values from the amplitude range.
///
/// The canvas outside the texture is filled with its mirror extension, which
/// keeps every row and column a copy of a texture row or column, so the rank
/// is unchanged and the window border at the true transform sees no seam.
pub fn deform_and_corrupt(
    texture: &GrayImage,
    angle: f64,
    corruption: &CorruptionSpec,
    margin: usize,
) -> Result<Deformed> {
    let (w, h) = (texture.width(), texture.height());
    let needed = required_margin(h, w, angle);
    if margin < needed {
        return Err(Error::DegenerateInput(format!(
            "canvas margin {margin} too small for a {w}x{h} texture rotated by {:.2}°, need {needed}",
            angle.to_degrees()
        )));
    }
    if !(0.0..1.0).contains(&corruption.fraction) {
        return Err(Error::InvalidParameter {
            name: "fraction",
            value: corruption.fraction,
            reason: "must lie in [0, 1)",
        });
    }

    let (cw, ch) = (w + 2 * margin, h + 2 * margin);
    let canvas_center = (0.5 * (cw as f64 - 1.0), 0.5 * (ch as f64 - 1.0));
    let tex_center = (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
    let rot = AffineParams::rotation(angle);
    let mut scene = DMatrix::from_fn(ch, cw, |r, c| {
        let v = (c as f64 - canvas_center.0, r as f64 - canvas_center.1);
        let (sx, sy) = rot.apply(v);
        texture.sample(mirror(sx + tex_center.0, w), mirror(sy + tex_center.1, h))
    });

    let mut mask = DMatrix::from_element(ch, cw, false);
    let count = (corruption.fraction * (w * h) as f64).round() as usize;
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
        let (lo, hi) = corruption.amplitude;
        for idx in sample(&mut rng, w * h, count).into_vec() {
            let (r, c) = (margin + idx / w, margin + idx % w);
            scene[(r, c)] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            mask[(r, c)] = true;
        }
    }

    Ok(Deformed {
        scene: GrayImage::new(scene),
        window: Window::new(margin as f64, margin as f64, w, h)?,
        angle,
        mask,
    })
}

/// One benchmark case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub texture: TextureSpec,
    pub angle: f64,
    pub corruption: CorruptionSpec,
    pub margin: usize,
}

impl Instance {
    pub fn build(&self) -> Result<Deformed> {
        let tex = gen_texture(&self.texture)?;
        deform_and_corrupt(&tex, self.angle, &self.corruption, self.margin)
    }
}

fn instance(id: usize, kind: TextureKind, size: usize, seed: u64) -> Instance {
    let angle = 10f64.to_radians();
    Instance {
        id,
        texture: TextureSpec::natural(kind, size, size, seed),
        angle,
        corruption: CorruptionSpec::uniform(0.05, seed.wrapping_add(7919)),
        margin: required_margin(size, size, angle) + size / 8,
    }
}

/// Four 32×32 instances, one per texture kind.
pub fn tiny_suite(seed: u64) -> Vec<Instance> {
    TextureKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| instance(i, k, 32, seed.wrapping_mul(1000).wrapping_add(i as u64)))
        .collect()
}

/// Twenty instances cycling through the texture kinds, ten at 32×32 then ten
/// at 64×64, all rotated by 10° with 5% corruption.
pub fn default_suite(seed: u64) -> Vec<Instance> {
    (0..20)
        .map(|i| {
            let size = if i < 10 { 32 } else { 64 };
            let kind = TextureKind::ALL[i % 4];
            instance(i, kind, size, seed.wrapping_mul(1000).wrapping_add(i as u64))
        })
        .collect()
}

/// Outer-loop settings used by the benchmark: defaults plus the rotation
/// grid initializer.
pub fn bench_config() -> OuterConfig {
    OuterConfig {
        init_angles: crate::outer::default_init_angles(),
        ..OuterConfig::default()
    }
}

/// One `(instance, round, solver)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub instance: usize,
    /// 1-based; 0 on failed rows.
    pub outer: usize,
    pub solver: SolverKind,
    pub iterations: usize,
    pub time_s: f64,
    pub rank: usize,
    pub e_l1: f64,
    pub eta: f64,
    pub objective: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Per `(instance, solver)` outcome of a rectification run.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub instance: usize,
    pub solver: SolverKind,
    pub rounds: usize,
    pub stagnated: bool,
    pub final_objective: f64,
    pub recovered_angle: f64,
    pub true_angle: f64,
    pub texture_rank: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub solver: SolverKind,
    pub median_iterations: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub solvers: Vec<SolverKind>,
    pub rows: Vec<ReportRow>,
    pub outcomes: Vec<InstanceOutcome>,
}

pub const CSV_HEADER: &str = "instance,outer,solver,iter,time_s,rank,e_l1,tol";

/// `x` in scientific notation with `digits` significant digits and a signed
/// two-digit exponent, e.g. `1.06e+00`.
pub fn format_sci(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.instance,
                r.outer,
                r.solver,
                r.iterations,
                format_sci(r.time_s, 3),
                r.rank,
                format_sci(r.e_l1, 3),
                format_sci(r.eta, 3),
            );
        }
        out
    }

    /// Median inner iterations and converged-row fraction, in solver order.
    pub fn summary(&self) -> Vec<SolverSummary> {
        self.solvers
            .iter()
            .map(|&solver| {
                let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.solver == solver).collect();
                let mut iters: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.error.is_none())
                    .map(|r| r.iterations as f64)
                    .collect();
                let converged = rows.iter().filter(|r| r.converged).count();
                SolverSummary {
                    solver,
                    median_iterations: median(&mut iters),
                    converged_fraction: if rows.is_empty() {
                        0.0
                    } else {
                        converged as f64 / rows.len() as f64
                    },
                }
            })
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.converged)
    }

    pub fn row(&self, instance: usize, outer: usize, solver: SolverKind) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.instance == instance && r.outer == outer && r.solver == solver)
    }

    pub fn outcome(&self, instance: usize, solver: SolverKind) -> Option<&InstanceOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.instance == instance && o.solver == solver)
    }
}

/// Median of a slice (NaN when empty); sorts in place.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn rows_for(inst: &Instance, solver: SolverKind, res: &RectifyResult) -> Vec<ReportRow> {
    res.per_round
        .iter()
        .map(|r| ReportRow {
            instance: inst.id,
            outer: r.round,
            solver,
            iterations: r.iterations,
            time_s: r.wall_time,
            rank: r.rank,
            e_l1: r.e_l1,
            eta: r.residuals.eta,
            objective: r.objective,
            converged: r.converged,
            error: None,
        })
        .collect()
}

/// Runs every solver on every instance and collects one row per outer round.
///
/// Every solver sees the identical scene for a given instance. A failing
/// `(instance, solver)` pair produces a single failed row and the harness
/// moves on.
pub fn run_benchmark(
    suite: &[Instance],
    solvers: &[SolverKind],
    cfg: &OuterConfig,
) -> Result<RunReport> {
    if suite.is_empty() {
        return Err(Error::DegenerateInput("benchmark suite is empty".into()));
    }
    if solvers.is_empty() {
        return Err(Error::DegenerateInput("benchmark solver list is empty".into()));
    }
    cfg.validate()?;

    let jobs: Vec<(usize, SolverKind)> = (0..suite.len())
        .flat_map(|i| solvers.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(Vec<ReportRow>, InstanceOutcome)> = jobs
        .par_iter()
        .map(|&(i, solver)| {
            let inst = &suite[i];
            let run = inst.build().and_then(|d| {
                let cfg = OuterConfig {
                    solver,
                    ..cfg.clone()
                };
                let tau0 = if cfg.init_angles.is_empty() {
                    AffineParams::IDENTITY
                } else {
                    crate::outer::init_search(&d.scene, &d.window, &cfg.init_angles, &cfg)?
                };
                rectify_from(&d.scene, &d.window, tau0, &cfg).map(|r| (d, r))
            });
            match run {
                Ok((d, res)) => {
                    let outcome = InstanceOutcome {
                        instance: inst.id,
                        solver,
                        rounds: res.rounds,
                        stagnated: res.stagnated,
                        final_objective: res.per_round.last().map_or(f64::NAN, |r| r.objective),
                        recovered_angle: res.tau_final.rotation_angle(),
                        true_angle: d.rectifying_tau().rotation_angle(),
                        texture_rank: inst.texture.rank,
                        error: None,
                    };
                    (rows_for(inst, solver, &res), outcome)
                }
                Err(e) => {
                    let msg = e.to_string();
                    let row = ReportRow {
                        instance: inst.id,
                        outer: 0,
                        solver,
                        iterations: 0,
                        time_s: f64::NAN,
                        rank: 0,
                        e_l1: f64::NAN,
                        eta: f64::NAN,
                        objective: f64::NAN,
                        converged: false,
                        error: Some(msg.clone()),
                    };
                    let outcome = InstanceOutcome {
                        instance: inst.id,
                        solver,
                        rounds: 0,
                        stagnated: false,
                        final_objective: f64::NAN,
                        recovered_angle: f64::NAN,
                        true_angle: -inst.angle,
                        texture_rank: inst.texture.rank,
                        error: Some(msg),
                    };
                    (vec![row], outcome)
                }
            }
        })
        .collect();

    let order = |s: SolverKind| solvers.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for (r, o) in results {
        rows.extend(r);
        outcomes.push(o);
    }
    rows.sort_by_key(|r| (r.instance, r.outer, order(r.solver)));
    outcomes.sort_by_key(|o| (o.instance, order(o.solver)));
    Ok(RunReport {
        solvers: solvers.to_vec(),
        rows,
        outcomes,
    })
}
