use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use pmc_core::affine::canonical_representative;
use pmc_core::geometry::{verify, ImmersionField};
use pmc_core::io::{self, FieldSpec, RunManifest};
use pmc_core::solver::{solve_pmc, SolveStatus, SolverConfig};
use pmc_core::weierstrass::{DiskGrid, Family, FamilyKind, PlanarImmersion};
use pmc_core::{HarmonicField, PmcError, SphericalGrid, SphericalTransform};

const EXIT_INPUT: u8 = 1;
const EXIT_STALL: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "pmc",
    version,
    about = "Conformal spheres with prescribed mean curvature"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for an immersion with mean curvature H + ℓ.
    Solve {
        #[arg(long = "h-target")]
        h_target: PathBuf,
        #[arg(long = "L", visible_alias = "degree", default_value_t = 24)]
        degree: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        grid_degree: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "pmc-out")]
        out_dir: PathBuf,
    },
    /// Print the verification report of an immersion.
    Verify {
        #[arg(long)]
        immersion: PathBuf,
        #[arg(long)]
        grid_degree: Option<usize>,
    },
    /// Canonical representative of H in its affine class.
    Balance {
        #[arg(long)]
        h: PathBuf,
        /// `round`, or a JSON field giving the area weight.
        #[arg(long, default_value = "round")]
        weight: String,
        #[arg(long)]
        grid_degree: Option<usize>,
    },
    /// Evaluate one of the explicit minimal surfaces on a disk.
    Example {
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Blow-down parameter t for enneper, order k for odd and even.
        #[arg(long, allow_negative_numbers = true)]
        param: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        rings: usize,
        #[arg(long, default_value_t = 64)]
        angles: usize,
        /// Directory for the OBJ mesh and manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write an immersion as an OBJ mesh.
    ExportObj {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_degree: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Enneper,
    Odd,
    Even,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = std::env::var("PMC_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Solve {
            h_target,
            degree,
            tol,
            steps,
            grid_degree,
            noise,
            seed,
            out_dir,
        } => {
            let config = SolverConfig {
                degree,
                grid_degree,
                tol,
                steps,
                noise,
                seed,
                ..SolverConfig::default()
            };
            solve(&h_target, &config, &out_dir)
        }
        Command::Verify {
            immersion,
            grid_degree,
        } => {
            let field = io::read_field(&immersion)?;
            let immersion = ImmersionField::new(field)?;
            let l = grid_degree.unwrap_or((2 * immersion.degree()).max(24));
            let transform = SphericalTransform::new(&SphericalGrid::new(l)?);
            print_json(&verify(&immersion, &transform)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Balance {
            h,
            weight,
            grid_degree,
        } => balance(&h, &weight, grid_degree),
        Command::Example {
            family,
            param,
            radius,
            rings,
            angles,
            out_dir,
        } => example(family, param, radius, rings, angles, out_dir.as_deref()),
        Command::ExportObj {
            input,
            out,
            grid_degree,
        } => {
            let field = io::read_field(&input)?;
            let l = grid_degree.unwrap_or(field.degree().max(8));
            let mesh = io::export_obj(&field, &SphericalGrid::new(l)?, &out)?;
            let mut manifest = RunManifest::new("export-obj");
            manifest.config = json!({ "grid_degree": l });
            manifest.add_input(&input)?;
            manifest.add_output(&out);
            manifest.diagnostics = json!({
                "vertices": mesh.vertices.len(),
                "faces": mesh.faces.len(),
            });
            let path = manifest_path(&out);
            io::write_json(&path, &manifest)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    print!("{}", io::to_json(value)?);
    Ok(())
}

fn solve(h_path: &Path, config: &SolverConfig, out_dir: &Path) -> anyhow::Result<ExitCode> {
    let h = io::read_field(h_path)?;
    if h.components() != 1 {
        return Err(PmcError::Config("target must be a scalar field".into()).into());
    }
    let report = solve_pmc(&h, config)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| anyhow!(e))
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = RunManifest::new("solve");
    manifest.config = serde_json::to_value(config)?;
    manifest.add_input(h_path)?;

    let immersion_path = out_dir.join("immersion.json");
    io::write_field(&immersion_path, report.immersion.field())?;
    let affine_path = out_dir.join("affine.json");
    io::write_json(&affine_path, &report.affine)?;
    let report_path = out_dir.join("report.json");
    let summary = report.summary();
    io::write_json(&report_path, &summary)?;
    let obj_path = out_dir.join("surface.obj");
    io::export_obj(
        report.immersion.field(),
        &SphericalGrid::new(config.degree)?,
        &obj_path,
    )?;
    for p in [&immersion_path, &affine_path, &report_path, &obj_path] {
        manifest.add_output(p);
    }
    manifest.diagnostics = json!({
        "status": summary.status,
        "h_target": FieldSpec::from(&h),
        "residual_history": summary.residual_history,
        "steps": summary.steps,
        "affine": summary.affine,
        "diagnostics": summary.diagnostics,
        "verification": summary.verification,
        "wall_time": report.wall_time,
    });
    manifest.write(out_dir)?;
    let mut out = serde_json::to_value(&summary.status)?;
    out["affine"] = serde_json::to_value(summary.affine)?;
    print_json(&out)?;
    Ok(match report.status {
        SolveStatus::Converged => ExitCode::SUCCESS,
        SolveStatus::Stalled { .. } => {
            eprintln!("solver stalled; partial outputs in {}", out_dir.display());
            ExitCode::from(EXIT_STALL)
        }
    })
}

fn balance(h_path: &Path, weight: &str, grid_degree: Option<usize>) -> anyhow::Result<ExitCode> {
    let h = io::read_field(h_path)?;
    if h.components() != 1 {
        return Err(PmcError::Config("target must be a scalar field".into()).into());
    }
    let weight_field = match weight {
        "round" => None,
        path => Some(io::read_field(Path::new(path))?),
    };
    let top = weight_field
        .as_ref()
        .map_or(0, HarmonicField::degree)
        .max(h.degree());
    let l = grid_degree.unwrap_or((2 * top).max(8));
    let transform = SphericalTransform::new(&SphericalGrid::new(l)?);
    let synth = |f: &HarmonicField| -> anyhow::Result<Vec<f64>> {
        Ok(transform.synthesize(&f.with_degree(l))?.swap_remove(0))
    };
    let h_vals = synth(&h)?;
    let w_vals = match &weight_field {
        None => vec![1.0; transform.grid().len()],
        Some(w) => synth(w)?,
    };
    let (rep, ell) = canonical_representative(&h_vals, &w_vals, &transform)?;
    let min = rep.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rep.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rep_field = transform.analyze_values(&rep)?;
    print_json(&json!({
        "b": ell.b,
        "a": ell.constant(),
        "representative_min": min,
        "representative_max": max,
        "representative": FieldSpec::from(&rep_field),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn example(
    family: FamilyArg,
    param: f64,
    radius: f64,
    rings: usize,
    angles: usize,
    out_dir: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let fam = match family {
        FamilyArg::Enneper => Family::enneper(param),
        FamilyArg::Odd | FamilyArg::Even => {
            if param.fract() != 0.0 || param < 1.0 {
                return Err(PmcError::Config(format!(
                    "order k must be a positive integer, got {param}"
                ))
                .into());
            }
            let kind = if matches!(family, FamilyArg::Odd) {
                FamilyKind::Odd
            } else {
                FamilyKind::Even
            };
            Family::new(kind, param as u32, 1.0)?
        }
    };
    let surface = PlanarImmersion::new(fam, DiskGrid::new(radius, rings, angles)?);
    let (total_curvature, int_a2) = surface.curvature_integrals();
    let branch: Vec<pmc_core::BranchReport> = surface
        .detect_branch_points()
        .into_iter()
        .map(Into::into)
        .collect();
    let summary = json!({
        "family": fam,
        "radius": radius,
        "max_mean_curvature": surface.max_mean_curvature(),
        "max_conformality": surface.max_conformality(),
        "total_curvature": total_curvature,
        "intA2": int_a2,
        "limit_total_curvature": fam.limit_total_curvature(),
        "branch_points": branch,
    });
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let obj = dir.join("surface.obj");
        io::export_planar_obj(&surface, &obj)?;
        let mut manifest = RunManifest::new("example");
        manifest.config =
            json!({ "family": fam, "radius": radius, "rings": rings, "angles": angles });
        manifest.add_output(&obj);
        manifest.diagnostics = summary.clone();
        manifest.write(dir)?;
    }
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}
