//! `fracld`: configuration-driven experiments for slow-fast fBm systems.

mod config;
mod error;
mod experiments;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fracld::rate_fn::Method;
use fracld::{Execution, GridPath};
use serde::Serialize;

use config::{Experiment, Loaded, PathSpec};
use error::{CliError, CliResult};
use experiments::{run_experiment, Artifact, Ctx};

#[derive(Parser)]
#[command(name = "fracld", version, about = "Slow-fast fBm simulation, rate functions and Monte Carlo checks")]
struct Cli {
    /// Worker threads for trial-level parallelism; 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long, alias = "spec")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample fBm paths to a long-format CSV.
    SampleFbm {
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 1025)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the configured system and summarize the averaging error.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the cell problem and report the averaged diffusivity.
    Poisson {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a rate functional along a path.
    Rate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        hurst: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate S^H against the two H = 1/2 forms.
    LimitStudy {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_delimiter = ',')]
        hurst_list: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo experiments along the (eps, eta) schedule.
    Mc {
        #[arg(value_enum)]
        kind: McKind,
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration without running anything.
    Validate {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Run every experiment of a configuration and write a manifest.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory; defaults to $FRACLD_OUT_DIR, then `[output] dir`, then `out`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Run despite validation failures.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Explicit,
    General,
    FwHalf,
    TildeHalf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Explicit => Method::Explicit,
            MethodArg::General => Method::General,
            MethodArg::FwHalf => Method::FwHalf,
            MethodArg::TildeHalf => Method::TildeHalf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum McKind {
    Laplace,
    RareEvent,
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes the first artifact to `out` and any others beside it as
/// `<stem><suffix>`.
fn write_artifacts(out: &Path, arts: &[Artifact]) -> CliResult<Vec<PathBuf>> {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut written = Vec::new();
    for (i, a) in arts.iter().enumerate() {
        let p = if i == 0 { out.to_path_buf() } else { out.with_file_name(format!("{stem}{}", a.suffix)) };
        write(&p, &a.bytes)?;
        written.push(p);
    }
    Ok(written)
}

fn gate(loaded: &Loaded) -> CliResult<()> {
    let report = validate::validate(&loaded.config);
    if !report.passed() {
        eprint!("{report}");
        let names: Vec<&str> = report.hard_failures().iter().map(|c| c.name).collect();
        return Err(CliError::Validation(names.join(", ")));
    }
    Ok(())
}

fn single(loaded: &Loaded, exec: Execution, exp: Experiment, out: &Path) -> CliResult<()> {
    gate(loaded)?;
    let ctx = Ctx { loaded, exec };
    let arts = run_experiment(&ctx, &exp)?;
    write_artifacts(out, &arts)?;
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    kind: &'static str,
    status: &'static str,
    files: Vec<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    created_unix: u64,
    forced: bool,
    validation: &'a validate::Report,
    experiments: Vec<ManifestEntry>,
}

fn out_dir(loaded: &Loaded, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FRACLD_OUT_DIR").map(PathBuf::from))
        .or_else(|| loaded.config.output.dir.as_ref().map(|d| loaded.resolve(d)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_all(loaded: &Loaded, exec: Execution, dir: &Path, force: bool) -> CliResult<()> {
    let report = validate::validate(&loaded.config);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut entries = Vec::new();
    let mut first_err: Option<CliError> = None;
    if !report.passed() && !force {
        eprint!("{report}");
        let names: Vec<&str> = report.hard_failures().iter().map(|c| c.name).collect();
        first_err = Some(CliError::Validation(names.join(", ")));
    } else {
        let ctx = Ctx { loaded, exec };
        for exp in &loaded.config.experiments {
            let name = exp.name().to_string();
            let result = run_experiment(&ctx, exp).and_then(|arts| {
                let mut files = Vec::new();
                for a in &arts {
                    let file = format!("{name}{}", a.suffix);
                    write(&dir.join(&file), &a.bytes)?;
                    files.push(file);
                }
                Ok(files)
            });
            match result {
                Ok(files) => entries.push(ManifestEntry { name, kind: exp.kind(), status: "ok", files, error: None }),
                Err(e) => {
                    eprintln!("experiment `{name}` failed: {e}");
                    entries.push(ManifestEntry { name, kind: exp.kind(), status: "failed", files: vec![], error: Some(e.to_string()) });
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    let manifest = Manifest {
        tool: "fracld",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: loaded.hash(),
        seed: loaded.config.seed,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        forced: force,
        validation: &report,
        experiments: entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write(&dir.join("manifest.json"), &bytes)?;
    first_err.map_or(Ok(()), Err)
}

fn csv_path(file: &Path) -> PathSpec {
    PathSpec::Csv { file: std::path::absolute(file).unwrap_or_else(|_| file.to_path_buf()) }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let exec = if cli.parallel > 1 {
        fracld::exec::set_threads(cli.parallel)?;
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    match cli.command {
        Command::SampleFbm { hurst, n, horizon, paths, dim, seed, out } => {
            let bytes = experiments::sample_fbm_direct(hurst, n, horizon, paths, dim, seed, exec)?;
            write(&out, &bytes)
        }
        Command::Simulate { cfg, trials, out } => {
            let l = Loaded::read(&cfg.config)?;
            single(&l, exec, Experiment::Simulate { name: "simulate".into(), trials, save_paths: 0 }, &out)
        }
        Command::Poisson { cfg, out } => {
            let l = Loaded::read(&cfg.config)?;
            single(&l, exec, Experiment::Poisson { name: "poisson".into() }, &out)
        }
        Command::Rate { cfg, path, method, hurst, out } => {
            let l = Loaded::read(&cfg.config)?;
            gate(&l)?;
            let prep = l.config.prepare()?;
            let drift = prep.drift()?.with_exec(exec);
            let phi = GridPath::load_csv(&path).map_err(|e| match e {
                fracld::Error::Io(io) => CliError::io(&path, io),
                other => other.into(),
            })?;
            let r = experiments::evaluate_rate(&prep, &drift, &phi, method.into(), hurst.unwrap_or(l.config.model.hurst), exec)?;
            let mut bytes = serde_json::to_vec_pretty(&r)?;
            bytes.push(b'\n');
            write(&out, &bytes)
        }
        Command::LimitStudy { cfg, path, hurst_list, out } => {
            let l = Loaded::read(&cfg.config)?;
            if hurst_list.is_empty() {
                return Err(CliError::Config("--hurst-list needs at least one value".into()));
            }
            single(&l, exec, Experiment::LimitStudy { name: "limit".into(), hurst_list, path: csv_path(&path) }, &out)
        }
        Command::Mc { kind, cfg, out } => {
            let l = Loaded::read(&cfg.config)?;
            let exp = l
                .config
                .experiments
                .iter()
                .find(|e| match kind {
                    McKind::Laplace => matches!(e, Experiment::Laplace { .. }),
                    McKind::RareEvent => matches!(e, Experiment::RareEvent { .. }),
                })
                .cloned()
                .ok_or_else(|| CliError::Config("the configuration declares no experiment of that kind".into()))?;
            single(&l, exec, exp, &out)
        }
        Command::Validate { cfg } => {
            let l = Loaded::read(&cfg.config)?;
            let report = validate::validate(&l.config);
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.hard_failures().iter().map(|c| c.name).collect();
                Err(CliError::Validation(names.join(", ")))
            }
        }
        Command::Run { cfg, out_dir: flag, force } => {
            let l = Loaded::read(&cfg.config)?;
            let dir = out_dir(&l, flag);
            run_all(&l, exec, &dir, force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
seed = 1
[model]
dims = { slow = 1, fast = 1, fbm = 1, bm = 1 }
hurst = 0.7
eps = 0.01
eta = 0.001
x0 = [1.0]
[model.coefficients]
c = [{ kind = "linear", x = [-1.0], y = [1.0] }]
sigma1 = [{ kind = "constant", value = 0.5 }]
f = [{ kind = "linear", y = [-1.0] }]
tau = [{ kind = "constant", value = 1.4142135623730951 }]
[grid]
n = 17
"#;

    fn load(dir: &Path, text: &str) -> Loaded {
        let p = dir.join("c.toml");
        std::fs::write(&p, text).unwrap();
        Loaded::read(&p).unwrap()
    }

    fn manifest(dir: &Path) -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
    }

    #[test]
    fn empty_run_writes_only_the_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        run_all(&load(tmp.path(), OU), Execution::Sequential, &out, false).unwrap();
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
        let m = manifest(&out);
        assert_eq!(m["experiments"].as_array().unwrap().len(), 0);
        assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn validation_failure_blocks_unless_forced() {
        let tmp = tempfile::tempdir().unwrap();
        let bad = OU.replace("y = [1.0] }]", "y = [1.0] }]\nb = [{ kind = \"polynomial\", coeffs = [0.0, 0.0, 1.0] }]")
            + "\n[[experiments]]\nkind = \"poisson\"\nname = \"cell\"\n";
        let loaded = load(tmp.path(), &bad);
        let out = tmp.path().join("blocked");
        let err = run_all(&loaded, Execution::Sequential, &out, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(manifest(&out)["experiments"].as_array().unwrap().len(), 0);

        let forced = tmp.path().join("forced");
        let err = run_all(&loaded, Execution::Sequential, &forced, true).unwrap_err();
        assert!(matches!(err, CliError::Core(fracld::Error::Centering { .. })), "{err}");
        assert_eq!(err.exit_code(), 2);
        let m = manifest(&forced);
        assert_eq!(m["forced"], true);
        assert_eq!(m["experiments"][0]["status"], "failed");
    }

    #[test]
    fn artifacts_are_listed() {
        let tmp = tempfile::tempdir().unwrap();
        let text = OU.to_string() + "\n[[experiments]]\nkind = \"simulate\"\nname = \"sim\"\ntrials = 2\n";
        let out = tmp.path().join("o");
        run_all(&load(tmp.path(), &text), Execution::Sequential, &out, false).unwrap();
        let m = manifest(&out);
        let files: Vec<&str> = m["experiments"][0]["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
        assert_eq!(files, ["sim_summary.json", "sim_mean.csv"]);
        for f in files {
            assert!(out.join(f).exists());
        }
    }

    #[test]
    fn single_artifact_names_follow_out() {
        let tmp = tempfile::tempdir().unwrap();
        let arts = vec![
            Artifact { suffix: ".csv", bytes: b"a".to_vec() },
            Artifact { suffix: ".json", bytes: b"b".to_vec() },
        ];
        let written = write_artifacts(&tmp.path().join("sub/table.csv"), &arts).unwrap();
        assert_eq!(written[1], tmp.path().join("sub/table.json"));
    }
}
