mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qlip::modulus::{self, ProjectionReport};
use qlip::qp::{self, QpSolution, QpStatus};
use qlip::tolerance::TOLERANCE_SCALE_ENV;
use qlip::verify::{self, DEFAULT_SAMPLES};
use qlip::{Error, IndexFamilies, IndexSet, InstanceFile, ModulusReport, PolyhedronFile, QpInstance, Tolerances, VerifyOptions};

use output::{sig6, to_json, vec6};

const SOUNDNESS_SLACK: f64 = 1e-6;
const SHARPNESS_FRACTION: f64 = 0.99;

#[derive(Parser)]
#[command(name = "qlip", version, about = "Aubin property and Lipschitz modulus of convex QP argmin mappings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aubin verdict, KKT families, per-D norms and the exact modulus.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum)]
        output: Option<Format>,
    },
    /// Modulus of the metric projection onto {x : A x <= b} at a point.
    Project {
        file: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Coords,
        #[arg(long, value_enum)]
        output: Option<Format>,
    },
    /// Solve the nominal QP.
    Solve {
        file: PathBuf,
        #[arg(long, value_enum)]
        output: Option<Format>,
    },
    /// Active set and the minimal and extended KKT index families.
    Families {
        file: PathBuf,
        #[arg(long, value_enum)]
        output: Option<Format>,
    },
    /// Compare the modulus with sampled and directional perturbation ratios.
    Verify {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_radii)]
        radii: Option<Coords>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES, value_parser = clap::value_parser!(usize))]
        samples: usize,
        #[arg(long, value_enum)]
        output: Option<Format>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

/// Comma-separated reals.
#[derive(Clone)]
struct Coords(Vec<f64>);

fn parse_point(s: &str) -> Result<Coords, String> {
    parse_list(s).map(Coords)
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("`{t}` is not a finite number")),
            }
        })
        .collect()
}

fn parse_radii(s: &str) -> Result<Coords, String> {
    let v = parse_list(s)?;
    if v.iter().any(|r| *r <= 0.0) {
        return Err("radii must be positive".into());
    }
    Ok(Coords(v))
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ScqFails | Error::NominalInfeasible | Error::NominalUnbounded => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 1, message }
}

fn tolerances() -> Result<Tolerances, Failure> {
    if let Ok(raw) = std::env::var(TOLERANCE_SCALE_ENV) {
        match raw.trim().parse::<f64>() {
            Ok(s) if s.is_finite() && s > 0.0 => {}
            _ => return Err(usage(format!("{TOLERANCE_SCALE_ENV} must be a positive number, got `{raw}`"))),
        }
    }
    Ok(Tolerances::from_env())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_instance(path: &Path, tol: &Tolerances) -> Result<QpInstance, Failure> {
    Ok(InstanceFile::from_json(&read_text(path)?)?.validate(tol)?)
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce(&T) -> String) {
    match format {
        Format::Json => println!("{}", to_json(value)),
        Format::Text => print!("{}", text(value)),
    }
}

fn sets(family: &[IndexSet]) -> String {
    let parts: Vec<String> = family.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn opt_set(d: &Option<IndexSet>) -> String {
    d.as_ref().map_or_else(|| "none".into(), |d| d.to_string())
}

fn warnings_text(w: &[String]) -> String {
    let mut s = String::new();
    if w.is_empty() {
        s.push_str("warnings: none\n");
    } else {
        s.push_str("warnings:\n");
        for line in w {
            s.push_str(&format!("  {line}\n"));
        }
    }
    s
}

fn families_text(f: &IndexFamilies) -> String {
    format!("active: {}\nminimal: {}\nextended: {}\n", f.active, sets(&f.minimal), sets(&f.extended))
}

fn per_d_text(per_d: &[modulus::PerD]) -> String {
    let mut s = String::from("per_D:\n");
    for e in per_d {
        let kind = if e.nonsingular { "nonsingular" } else { "singular" };
        s.push_str(&format!("  {:<12} {:<12} lip_SD {}\n", e.d.to_string(), kind, sig6(e.lip_sd.value())));
    }
    s
}

fn analyze_text(r: &ModulusReport) -> String {
    let mut s = format!(
        "status: {}\nx_bar: {}\nunique: {}\naubin: {}\nmodulus: {}\nnc: {}\n",
        status_name(r.status),
        vec6(&r.x_bar),
        r.unique,
        r.aubin,
        sig6(r.modulus.value()),
        r.nc
    );
    s.push_str(&families_text(&r.families));
    s.push_str(&per_d_text(&r.per_d));
    s.push_str(&format!("attaining_D: {}\n", opt_set(&r.attaining_d)));
    if let Some(dir) = &r.attaining_direction {
        s.push_str(&format!("alpha_star: {}\nbeta_star: {}\n", vec6(&dir.alpha_star), vec6(&dir.beta_star)));
    }
    s.push_str(&warnings_text(&r.warnings));
    s
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "OPTIMAL",
        QpStatus::Infeasible => "INFEASIBLE",
        QpStatus::UnboundedBelow => "UNBOUNDED_BELOW",
    }
}

fn analyze(path: &Path, format: Format) -> Result<(), Failure> {
    let tol = tolerances()?;
    let inst = load_instance(path, &tol)?;
    let report = modulus::lip_modulus(&inst, &tol)?;
    emit(format, &report, analyze_text);
    Ok(())
}

fn project_text(r: &ProjectionReport) -> String {
    let mut s = format!("projection: {}\nactive: {}\nfamily: {}\n", vec6(&r.projection), r.active, sets(&r.family));
    s.push_str(&per_d_text(&r.per_d));
    s.push_str(&format!(
        "modulus: {}\nattaining_D: {}\ngeneric_modulus: {}\n",
        sig6(r.modulus.value()),
        opt_set(&r.attaining_d),
        sig6(r.generic_modulus.value())
    ));
    s.push_str(&warnings_text(&r.warnings));
    s
}

fn project(path: &Path, point: &[f64], format: Format) -> Result<(), Failure> {
    let tol = tolerances()?;
    let (a, b) = PolyhedronFile::from_json(&read_text(path)?)?.matrix()?;
    if point.len() != a.cols() {
        return Err(usage(format!("--point has {} coordinates, the polyhedron lives in dimension {}", point.len(), a.cols())));
    }
    let report = modulus::lip_projection(&a, &b, point, &tol)?;
    emit(format, &report, project_text);
    Ok(())
}

fn solve_text(s: &QpSolution) -> String {
    let mut out = format!("status: {}\n", status_name(s.status));
    if let Some(x) = &s.x {
        out.push_str(&format!("x: {}\n", vec6(x)));
    }
    if let Some(v) = s.value {
        out.push_str(&format!("value: {}\n", sig6(v)));
    }
    if let Some(u) = s.unique {
        out.push_str(&format!("unique: {u}\n"));
    }
    if let Some(c) = &s.certificate {
        out.push_str(&format!("certificate D: {}\nlambda: {}\n", c.d, vec6(&c.lambda)));
    }
    out
}

fn solve(path: &Path, format: Format) -> Result<(), Failure> {
    let tol = tolerances()?;
    let inst = load_instance(path, &tol)?;
    let sol = qp::solve(&inst, &inst.nominal(), &tol);
    emit(format, &sol, solve_text);
    match sol.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::Infeasible => Err(Error::NominalInfeasible.into()),
        QpStatus::UnboundedBelow => Err(Error::NominalUnbounded.into()),
    }
}

#[derive(Serialize)]
struct FamiliesOutput {
    x_bar: Vec<f64>,
    unique: bool,
    active: IndexSet,
    minimal: Vec<IndexSet>,
    extended: Vec<IndexSet>,
    nc: bool,
    warnings: Vec<String>,
}

fn families(path: &Path, format: Format) -> Result<(), Failure> {
    let tol = tolerances()?;
    let inst = load_instance(path, &tol)?;
    let p = inst.nominal();
    let sol = qp::solve(&inst, &p, &tol);
    let x = match sol.status {
        QpStatus::Optimal => sol.x.expect("optimal solution carries x"),
        QpStatus::Infeasible => return Err(Error::NominalInfeasible.into()),
        QpStatus::UnboundedBelow => return Err(Error::NominalUnbounded.into()),
    };
    let fam = qlip::kkt_families(&inst, &p, &x, &tol)?;
    let out = FamiliesOutput {
        nc: fam.nc_holds(inst.n()),
        unique: sol.unique == Some(true),
        x_bar: x,
        active: fam.active,
        minimal: fam.minimal,
        extended: fam.extended,
        warnings: fam.warnings,
    };
    emit(format, &out, |o| {
        let mut s = format!(
            "x_bar: {}\nunique: {}\nactive: {}\nminimal: {}\nextended: {}\nnc: {}\n",
            vec6(&o.x_bar),
            o.unique,
            o.active,
            sets(&o.minimal),
            sets(&o.extended),
            o.nc
        );
        s.push_str(&warnings_text(&o.warnings));
        s
    });
    Ok(())
}

#[derive(Serialize)]
struct Probe {
    #[serde(rename = "D")]
    d: IndexSet,
    best_per_radius: Vec<f64>,
    final_ratio: f64,
}

#[derive(Serialize)]
struct Sampled {
    best_ratio: f64,
    best_per_radius: Vec<f64>,
}

#[derive(Serialize)]
struct VerifyOutput {
    aubin: bool,
    modulus: qlip::Modulus,
    seed: u64,
    radii: Vec<f64>,
    samples_per_radius: usize,
    sampled: Option<Sampled>,
    sampling_note: Option<String>,
    probe: Option<Probe>,
    soundness: &'static str,
    sharpness: &'static str,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verify_text(o: &VerifyOutput) -> String {
    let mut s = format!(
        "aubin: {}\nmodulus: {}\nseed: {}\nradii: {}\nsamples_per_radius: {}\n",
        o.aubin,
        sig6(o.modulus.value()),
        o.seed,
        vec6(&o.radii),
        o.samples_per_radius,
    );
    if let Some(t) = &o.sampled {
        s.push_str(&format!("best_ratio: {}\nbest_per_radius: {}\n", sig6(t.best_ratio), vec6(&t.best_per_radius)));
    }
    if let Some(note) = &o.sampling_note {
        s.push_str(&format!("sampling: {note}\n"));
    }
    if let Some(p) = &o.probe {
        s.push_str(&format!("probe D: {}\nprobe best_per_radius: {}\n", p.d, vec6(&p.best_per_radius)));
    }
    match &o.sampled {
        Some(t) => s.push_str(&format!(
            "{} soundness: best_ratio {} <= modulus + {SOUNDNESS_SLACK:e}\n",
            o.soundness,
            sig6(t.best_ratio)
        )),
        None => s.push_str(&format!("{} soundness: no sampled ratios\n", o.soundness)),
    }
    match &o.probe {
        Some(p) => s.push_str(&format!(
            "{} sharpness: probe ratio {} >= {SHARPNESS_FRACTION} * modulus\n",
            o.sharpness,
            sig6(p.final_ratio)
        )),
        None => s.push_str(&format!("{} sharpness: modulus is infinite, nothing to attain\n", o.sharpness)),
    }
    s
}

fn verify(path: &Path, seed: u64, radii: Option<Vec<f64>>, samples: usize, format: Format) -> Result<(), Failure> {
    if samples == 0 {
        return Err(usage("--samples must be at least 1".into()));
    }
    let tol = tolerances()?;
    let inst = load_instance(path, &tol)?;
    let report = modulus::lip_modulus(&inst, &tol)?;
    let opts = VerifyOptions {
        radii: radii.unwrap_or_else(|| verify::DEFAULT_RADII.to_vec()),
        samples_per_radius: samples,
        seed,
        ..VerifyOptions::default()
    };
    let lip = report.modulus.value();
    // without the Aubin property nearby problems may have no solution at all
    let (sampled, sampling_note) = match verify::estimate_modulus(&inst, &opts, &tol) {
        Ok(t) => (Some(Sampled { best_ratio: t.best_ratio, best_per_radius: t.best_per_radius }), None),
        Err(e @ Error::SolverFailure { .. }) if !report.modulus.is_finite() => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let probe = verify::probe_report(&inst, &report, &opts.radii, &tol)?;
    let sound = sampled.as_ref().is_none_or(|t| t.best_ratio <= lip + SOUNDNESS_SLACK);
    let sharp = probe.as_ref().is_none_or(|p| p.final_ratio() >= SHARPNESS_FRACTION * lip);
    let out = VerifyOutput {
        aubin: report.aubin,
        modulus: report.modulus,
        seed,
        radii: opts.radii.clone(),
        samples_per_radius: samples,
        soundness: if sampled.is_some() { verdict(sound) } else { "SKIP" },
        sampled,
        sampling_note,
        probe: probe.map(|p| Probe {
            d: report.attaining_d.clone().expect("probe runs only with an attaining set"),
            final_ratio: p.final_ratio(),
            best_per_radius: p.best_per_radius,
        }),
        sharpness: if report.modulus.is_finite() { verdict(sharp) } else { "SKIP" },
    };
    emit(format, &out, verify_text);
    if sound && sharp {
        Ok(())
    } else {
        Err(Failure { code: 3, message: "perturbation check failed".into() })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { file, output } => analyze(&file, output.unwrap_or(Format::Json)),
        Command::Project { file, point, output } => project(&file, &point.0, output.unwrap_or(Format::Json)),
        Command::Solve { file, output } => solve(&file, output.unwrap_or(Format::Json)),
        Command::Families { file, output } => families(&file, output.unwrap_or(Format::Json)),
        Command::Verify { file, seed, radii, samples, output } => {
            verify(&file, seed, radii.map(|r| r.0), samples, output.unwrap_or(Format::Text))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
