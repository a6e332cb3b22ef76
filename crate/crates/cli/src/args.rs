//! Flag grammar and validation into resolved configurations.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrt::inner::{InnerConfig, SolverKind};
use lrt::outer::{default_init_angles, OuterConfig};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "lrt", version, about = "Low-rank texture rectification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rectify a window of an image.
    Rectify(RectifyArgs),
    /// Run the synthetic benchmark suite.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RectifyArgs {
    /// PGM or PPM image (P2, P3, P5, P6).
    #[arg(long)]
    pub input: PathBuf,
    /// Window as `x,y,w,h` in pixels, origin at the top-left.
    #[arg(long)]
    pub window: String,
    #[arg(long, default_value = "sgs")]
    pub solver: String,
    /// Sparsity weight, or `auto` for 1/sqrt(window width).
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    #[arg(long, default_value_t = 1.618)]
    pub xi: f64,
    #[arg(long, default_value_t = 1.8)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 30)]
    pub max_outer: usize,
    /// Start from the best rotation on a ±25° grid instead of the identity.
    #[arg(long)]
    pub init_search: bool,
    #[arg(long, default_value = "lrt-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteName {
    Tiny,
    Default,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = SuiteName::Default)]
    pub suite: SuiteName,
    /// Comma-separated solver list.
    #[arg(long, default_value = "direct,sgs,sgs-g")]
    pub solvers: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "lrt-out")]
    pub out: PathBuf,
}

/// Pixel window `x,y,w,h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl std::str::FromStr for PixelWindow {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let malformed = || CliError::Usage(format!("malformed window `{s}`: expected x,y,w,h"));
        if parts.len() != 4 {
            return Err(malformed());
        }
        let mut v = [0usize; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| malformed())?;
        }
        let [x, y, w, h] = v;
        if w < 2 || h < 2 {
            return Err(CliError::Usage(format!(
                "window `{s}` must be at least 2x2 pixels"
            )));
        }
        Ok(Self { x, y, w, h })
    }
}

impl PixelWindow {
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<(), CliError> {
        let fits = |o: usize, len: usize, total: usize| o.checked_add(len).is_some_and(|e| e <= total);
        if fits(self.x, self.w, width) && fits(self.y, self.h, height) {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "window {},{},{},{} exceeds image bounds {width}x{height}",
                self.x, self.y, self.w, self.h
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RectifyConfig {
    pub input: PathBuf,
    pub window: PixelWindow,
    pub outer: OuterConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub suite: SuiteName,
    pub solvers: Vec<SolverKind>,
    pub seed: u64,
    pub out: PathBuf,
}

fn usage(e: lrt::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn parse_lambda(s: &str) -> Result<Option<f64>, CliError> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
        _ => Err(CliError::Usage(format!(
            "invalid --lambda `{s}`: expected `auto` or a positive number"
        ))),
    }
}

pub fn parse_solvers(s: &str) -> Result<Vec<SolverKind>, CliError> {
    let solvers = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<SolverKind>().map_err(CliError::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    if solvers.is_empty() {
        return Err(CliError::Usage("--solvers needs at least one solver".into()));
    }
    Ok(solvers)
}

impl RectifyArgs {
    pub fn resolve(&self) -> Result<RectifyConfig, CliError> {
        let window: PixelWindow = self.window.parse()?;
        let solver = self.solver.parse::<SolverKind>().map_err(CliError::Usage)?;
        let outer = OuterConfig {
            solver,
            inner: InnerConfig {
                xi: self.xi,
                rho: self.rho,
                tol: self.tol,
                max_iter: self.max_iter,
                ..InnerConfig::default()
            },
            lambda: parse_lambda(&self.lambda)?,
            max_outer: self.max_outer,
            init_angles: if self.init_search {
                default_init_angles()
            } else {
                Vec::new()
            },
            ..OuterConfig::default()
        };
        outer.validate().map_err(usage)?;
        Ok(RectifyConfig {
            input: self.input.clone(),
            window,
            outer,
            out: self.out.clone(),
        })
    }
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<BenchConfig, CliError> {
        Ok(BenchConfig {
            suite: self.suite,
            solvers: parse_solvers(&self.solvers)?,
            seed: self.seed,
            out: self.out.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        let w: PixelWindow = "1, 2,30,40".parse().unwrap();
        assert_eq!(w, PixelWindow { x: 1, y: 2, w: 30, h: 40 });
        for bad in ["1,2,3", "1,2,3,4,5", "a,2,3,4", "-1,2,3,4", "0,0,1,5", ""] {
            assert!(bad.parse::<PixelWindow>().is_err(), "{bad}");
        }
    }

    #[test]
    fn window_bounds() {
        let w = PixelWindow { x: 10, y: 0, w: 20, h: 5 };
        assert!(w.check_bounds(30, 5).is_ok());
        let err = w.check_bounds(29, 5).unwrap_err().to_string();
        assert!(err.contains("window"));
        let huge = PixelWindow { x: usize::MAX, y: 0, w: 2, h: 2 };
        assert!(huge.check_bounds(10, 10).is_err());
    }

    #[test]
    fn lambda_and_solvers() {
        assert_eq!(parse_lambda("auto").unwrap(), None);
        assert_eq!(parse_lambda("0.5").unwrap(), Some(0.5));
        for bad in ["0", "-1", "nan", "inf", "x"] {
            assert!(parse_lambda(bad).is_err());
        }
        assert_eq!(
            parse_solvers("sgs-g, direct").unwrap(),
            vec![SolverKind::SgsG, SolverKind::Direct]
        );
        assert!(parse_solvers("").is_err());
        assert!(parse_solvers(" , ").is_err());
        assert!(parse_solvers("sgs,admm").is_err());
    }
}
