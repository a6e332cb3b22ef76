use std::fmt::Write as _;
use std::path::Path;

use lrt::bench::{
    bench_config, default_suite, format_sci, run_benchmark, tiny_suite, ReportRow, RunReport,
};
use lrt::geometry::{normalize, warp};
use lrt::{AffineParams, GrayImage, Window};

use crate::args::{BenchConfig, RectifyConfig, SuiteName};
use crate::{pnm, CliError, Exit};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One parameter per line with 12 significant digits.
pub fn format_transform(tau: &AffineParams) -> String {
    tau.0.iter().map(|p| format!("{p:.11e}\n")).collect()
}

pub fn parse_transform(text: &str) -> Result<AffineParams, CliError> {
    let values: Vec<f64> = text
        .lines()
        .map(|l| l.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("malformed transform: {e}")))?;
    let p: [f64; 6] = values
        .try_into()
        .map_err(|v: Vec<f64>| CliError::Usage(format!("transform has {} values, expected 6", v.len())))?;
    Ok(AffineParams(p))
}

pub fn rectify(cfg: &RectifyConfig) -> Result<Exit, CliError> {
    let scene = pnm::read(&cfg.input)?;
    let pw = cfg.window;
    pw.check_bounds(scene.width(), scene.height())?;
    let window = Window::new(pw.x as f64, pw.y as f64, pw.w, pw.h)?;
    let res = lrt::rectify(&scene, &window, &cfg.outer)?;

    create_dir(&cfg.out)?;
    let (rectified, _) = normalize(&warp(&scene, &res.tau_final, &window)?)?;
    let lowrank = GrayImage::new(res.x_final.clone());
    let sparse = GrayImage::new(res.e_final.abs());
    let mut scales = String::from("# file min max (values mapped to 0 and 255)\n");
    for (name, image) in [
        ("rectified.pgm", &rectified),
        ("lowrank.pgm", &lowrank),
        ("sparse.pgm", &sparse),
    ] {
        let (bytes, (lo, hi)) = pnm::encode_scaled(image);
        write_file(&cfg.out.join(name), bytes)?;
        let _ = writeln!(scales, "{name} {lo:.11e} {hi:.11e}");
    }
    write_file(&cfg.out.join("scales.txt"), scales)?;
    write_file(&cfg.out.join("transform.txt"), format_transform(&res.tau_final))?;

    let report = RunReport {
        solvers: vec![cfg.outer.solver],
        rows: res
            .per_round
            .iter()
            .map(|r| ReportRow {
                instance: 0,
                outer: r.round,
                solver: cfg.outer.solver,
                iterations: r.iterations,
                time_s: r.wall_time,
                rank: r.rank,
                e_l1: r.e_l1,
                eta: r.residuals.eta,
                objective: r.objective,
                converged: r.converged,
                error: None,
            })
            .collect(),
        outcomes: Vec::new(),
    };
    write_file(&cfg.out.join("report.csv"), report.to_csv())?;

    println!(
        "{} rounds, rotation {:.3} deg, objective {}, output in {}",
        res.rounds,
        res.tau_final.rotation_angle().to_degrees(),
        res.per_round.last().map_or_else(|| "n/a".into(), |r| format_sci(r.objective, 3)),
        cfg.out.display()
    );
    if res.all_converged() && res.stagnated {
        Ok(Exit::Success)
    } else {
        if !res.all_converged() {
            eprintln!("warning: an inner solve hit the iteration cap before reaching the tolerance");
        }
        if !res.stagnated {
            eprintln!("warning: objective still changing after {} outer rounds", res.rounds);
        }
        Ok(Exit::NotConverged)
    }
}

pub fn bench(cfg: &BenchConfig) -> Result<Exit, CliError> {
    let suite = match cfg.suite {
        SuiteName::Tiny => tiny_suite(cfg.seed),
        SuiteName::Default => default_suite(cfg.seed),
    };
    create_dir(&cfg.out)?;
    let report = run_benchmark(&suite, &cfg.solvers, &bench_config())?;
    let path = cfg.out.join("report.csv");
    write_file(&path, report.to_csv())?;

    for s in report.summary() {
        println!(
            "{}: median iterations {}, converged {:.1}%",
            s.solver,
            s.median_iterations,
            100.0 * s.converged_fraction
        );
    }
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "instance {} ({}) failed: {}",
            row.instance,
            row.solver,
            row.error.as_deref().unwrap_or_default()
        );
    }
    println!("report written to {}", path.display());
    Ok(if report.all_converged() {
        Exit::Success
    } else {
        Exit::NotConverged
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_round_trips_byte_exactly() {
        let tau = AffineParams([-1.519e-2, 0.17364817766693, -1.0 / 3.0, 0.0, 12.5, -4e-9]);
        let text = format_transform(&tau);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(format_transform(&parse_transform(&text).unwrap()), text);
    }

    #[test]
    fn malformed_transforms_are_rejected() {
        assert!(parse_transform("1\n2\n3\n").is_err());
        assert!(parse_transform("1\n2\n3\n4\n5\nx\n").is_err());
    }
}
