//! Acceptance run: one `criterion N: PASS|FAIL: detail` line per criterion.
//! Exits non-zero if any criterion fails.

use std::f64::consts::{E, PI};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use fracld::cameron_martin::{c_h, HurstContext};
use fracld::coefficients::{BuiltinModel, Dims, Func};
use fracld::fbm_gen::{fbm_cov, FbmSampler};
use fracld::frac_calc::{default_young_alpha, young_integral};
use fracld::ldp_harness::{estimate_rare_event, gaussian_exceedance_rate, RareEventExperiment};
use fracld::multiscale_sim::{simulate_batch, McGrid, SlowFastSpec};
use fracld::quadrature::gamma;
use fracld::poisson_cell::{invariant_density_1d, prepare_fast, solve_poisson_1d, ScalarFn};
use fracld::rate_fn::{eval_rate_explicit, eval_rate_general, h_limit_study, integrate_limit_path, LimitDrift};
use fracld::rng::stream_rng;
use fracld::{Execution, GridPath};
use rand::Rng;

type Outcome = (bool, String);

fn main() {
    let checks: [(u32, fn() -> Outcome); 10] = [
        (1, operator_round_trip),
        (2, kernel_closed_form),
        (3, fbm_statistics),
        (4, young_consistency),
        (5, averaging_constants),
        (6, homogenization),
        (7, explicit_vs_general),
        (8, discontinuity_at_half),
        (9, gaussian_tail_asymptotics),
        (10, cli_determinism),
    ];
    let mut failed = 0;
    for (id, check) in checks {
        let start = Instant::now();
        let (ok, detail) = check();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id}: {}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn seq() -> Execution {
    Execution::Sequential
}

fn operator_round_trip() -> Outcome {
    let start = Instant::now();
    let n = 2048;
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    for h in [0.6, 0.75, 0.9] {
        let ctx = HurstContext::on_horizon(h, n, 1.0).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let t = ctx.time(i);
                    a.iter().enumerate().map(|(k, c)| c * (k as f64 * PI * t).cos()).sum::<f64>()
                })
                .collect();
            let back = ctx.kh_inverse_scalar(&ctx.kh_scalar(&v, seq()), seq());
            let lo = (0.05 * (n - 1) as f64).ceil() as usize;
            let scale = v[lo..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let err = (lo..n).fold(0.0f64, |m, i| m.max((back[i] - v[i]).abs()));
            worst = worst.max(err / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-3 && secs < 10.0, format!("max relative error {worst:.2e} over 60 paths in {secs:.2}s"))
}

fn kernel_closed_form() -> Outcome {
    let n = 1025;
    let mut worst: f64 = 0.0;
    for h in [0.6, 0.75, 0.9] {
        let ctx = HurstContext::on_horizon(h, n, 1.0).unwrap();
        let k1 = ctx.kdot_scalar(&vec![1.0; n], seq());
        for (i, v) in k1.iter().enumerate().skip(10) {
            let want = ctx.c_h_gamma() * ctx.time(i).powf(h - 0.5);
            worst = worst.max((v - want).abs() / want);
        }
    }
    let near_half = c_h(0.51).unwrap() * gamma(0.99);
    (
        worst <= 1e-4 && (near_half - 1.0).abs() <= 0.05,
        format!("max relative error {worst:.2e} for s >= 10 dt; c_H Gamma(3/2-H) at H=0.51 is {near_half:.4}"),
    )
}

fn fbm_statistics() -> Outcome {
    let (h, n, paths) = (0.7, 512, 10_000);
    let sampler = FbmSampler::new(h, n, 1.0).unwrap();
    let pairs = [(0.1, 0.2), (0.25, 0.75), (0.5, 0.5), (0.3, 0.9), (0.6, 1.0)];
    let idx = |t: f64| (t * (n - 1) as f64).round() as usize;
    let mut ends = Vec::with_capacity(paths);
    let mut prods = vec![Vec::with_capacity(paths); pairs.len()];
    for trial in 0..paths {
        let p = sampler.sample(2024, trial as u64, 1).unwrap();
        ends.push(p.get(n - 1, 0));
        for (j, (s, t)) in pairs.iter().enumerate() {
            prods[j].push(p.get(idx(*s), 0) * p.get(idx(*t), 0));
        }
    }
    let (mean, sd) = mean_sd(&ends);
    let var = sd * sd;
    let var_se = var * (2.0 / (paths as f64 - 1.0)).sqrt();
    let mut ok = ((var - 1.0) / var_se).abs() <= 4.0;
    let mut worst_z: f64 = ((var - 1.0) / var_se).abs();
    for (j, (s, t)) in pairs.iter().enumerate() {
        let (m, sd) = mean_sd(&prods[j]);
        let ts = idx(*s) as f64 / (n - 1) as f64;
        let tt = idx(*t) as f64 / (n - 1) as f64;
        let z = ((m - fbm_cov(h, ts, tt)) / (sd / (paths as f64).sqrt())).abs();
        ok &= z <= 4.0;
        worst_z = worst_z.max(z);
    }
    (ok, format!("Var(B_1) = {var:.4} (mean {mean:.4}); largest |z| over variance and 5 covariances {worst_z:.2}"))
}

fn young_consistency() -> Outcome {
    let n = 1025;
    let unit = |f: fn(f64) -> f64| GridPath::on_unit(n, 1.0, f).unwrap();
    let smooth = young_integral(&unit(|t| t), &unit(|t| t * t), 0.5).unwrap().get(n - 1, 0);
    let smooth_err = (smooth - 2.0 / 3.0).abs();

    let h = 0.7;
    let refine = 8;
    let fine_n = (n - 1) * refine + 1;
    let fine = FbmSampler::new(h, fine_n, 1.0).unwrap();
    let integrand = |t: f64| 1.0 + t * t + 0.5 * (2.0 * PI * t).sin();
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let g_fine = fine.sample(77, trial, 1).unwrap();
        let riemann: f64 = (0..fine_n - 1)
            .map(|i| integrand(g_fine.time(i)) * (g_fine.get(i + 1, 0) - g_fine.get(i, 0)))
            .sum();
        let g = g_fine.subsample(refine);
        let f = GridPath::on_unit(n, 1.0, integrand).unwrap();
        let y = young_integral(&f, &g, default_young_alpha(h)).unwrap().get(n - 1, 0);
        worst = worst.max((y - riemann).abs() / riemann.abs());
    }
    (
        smooth_err <= 1e-3 && worst <= 1e-2,
        format!("int t d(t^2) error {smooth_err:.2e}; fBm integrator worst relative gap {worst:.2e} over 5 paths"),
    )
}

fn averaging_constants() -> Outcome {
    let (alpha, lambda) = (1.3, 0.7);
    let f: ScalarFn = Arc::new(move |y| -alpha * y);
    let tau: ScalarFn = Arc::new(|_| 2f64.sqrt());
    let mu = invariant_density_1d(f, tau, None, 4001).unwrap();
    let b: Vec<ScalarFn> = vec![Arc::new(move |y| lambda * y)];
    let psol = solve_poisson_1d(&b, &mu, 1e-6).unwrap();
    let sd = mu.variance().sqrt();
    let mut ou_err: f64 = 0.0;
    let mut out = [0.0];
    for i in 0..=200 {
        let y = -4.0 * sd + 8.0 * sd * i as f64 / 200.0;
        psol.psi(&[y], &mut out);
        ou_err = ou_err.max((out[0] - lambda * y / alpha).abs());
    }

    let f: ScalarFn = Arc::new(|y| -y);
    let tau: ScalarFn = Arc::new(|_| 2f64.sqrt());
    let mu = invariant_density_1d(f, tau, None, 4001).unwrap();
    let s1 = mu.integrate(f64::cos);
    let s1sq = mu.integrate(|y| y.cos().powi(2));
    let e1 = (s1 * s1 - 1.0 / E).abs();
    let e2 = (s1sq - 0.5 * (1.0 + (-2.0f64).exp())).abs();
    (
        ou_err <= 1e-6 && e1 <= 1e-6 && e2 <= 1e-6,
        format!("OU cell solution error {ou_err:.2e}; cos averages errors {e1:.2e}, {e2:.2e}"),
    )
}

fn homogenization() -> Outcome {
    let start = Instant::now();
    let model = BuiltinModel::new(Dims { slow: 1, fast: 1, fbm: 0, bm: 1 })
        .with_c(vec![Func::linear(vec![-1.0], vec![1.0], 0.0)])
        .with_f(vec![Func::linear(vec![], vec![-1.0], 0.0)])
        .with_tau(vec![Func::constant(2f64.sqrt())]);
    let model = Arc::new(model);
    let grid = McGrid { n: 101, horizon: 1.0, substeps: None };
    let x0 = 1.0;
    let mut errors = Vec::new();
    for eps in [0.1f64, 0.03, 0.01] {
        let eta = eps.powf(1.5);
        let spec = SlowFastSpec::new(model.clone(), 0.7, eps, eta, vec![x0], vec![0.0], None).unwrap();
        let sups = simulate_batch(&spec, grid, 100, 9, seq(), |r| {
            r.ok().map(|tr| {
                (0..tr.x.len()).fold(0.0f64, |m, i| m.max((tr.x.get(i, 0) - x0 * (-tr.x.time(i)).exp()).abs()))
            })
        })
        .unwrap();
        let done: Vec<f64> = sups.into_iter().flatten().collect();
        errors.push(done.iter().sum::<f64>() / done.len() as f64);
    }
    let secs = start.elapsed().as_secs_f64();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    (
        errors[2] <= 0.1 && decreasing && secs < 120.0,
        format!("mean sup-errors at eps 0.1/0.03/0.01: {:.4}/{:.4}/{:.4} in {secs:.1}s", errors[0], errors[1], errors[2]),
    )
}

fn explicit_vs_general() -> Outcome {
    let model = BuiltinModel::new(Dims { slow: 1, fast: 1, fbm: 1, bm: 1 })
        .with_c(vec![Func::linear(vec![-1.0], vec![1.0], 0.0)])
        .with_sigma1(vec![Func::linear(vec![0.3], vec![], 1.0)])
        .with_f(vec![Func::linear(vec![], vec![-1.0], 0.0)])
        .with_tau(vec![Func::constant(2f64.sqrt())]);
    let (mu, psol) = prepare_fast(&model, 1e-4, 4001).unwrap();
    let drift = LimitDrift::from_model(Arc::new(model), mu, Arc::new(psol)).unwrap();
    let n = 1024;
    let ctx = HurstContext::on_horizon(0.7, n, 1.0).unwrap();
    let mut rng = stream_rng(7, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0));
        let phi = GridPath::on_unit(n, 1.0, |t| a * t * t + b * t.powi(3) + 0.2 * (c * t).sin()).unwrap();
        let e = eval_rate_explicit(&phi, &drift, &ctx).unwrap().value;
        let g = eval_rate_general(&phi, &drift, &ctx).unwrap().value;
        worst = worst.max((e - g).abs() / e);
    }
    (worst <= 1e-2, format!("max relative disagreement {worst:.2e} over 10 paths"))
}

fn discontinuity_at_half() -> Outcome {
    let model = BuiltinModel::new(Dims { slow: 1, fast: 1, fbm: 1, bm: 1 })
        .with_sigma1(vec![Func::cos_y(1.0)])
        .with_f(vec![Func::linear(vec![], vec![-1.0], 0.0)])
        .with_tau(vec![Func::constant(2f64.sqrt())]);
    let (mu, psol) = prepare_fast(&model, 1e-4, 4001).unwrap();
    let drift = LimitDrift::from_model(Arc::new(model), mu, Arc::new(psol)).unwrap();
    let n = 1025;
    let phi = integrate_limit_path(&drift, &[0.0], |t| vec![t * t], n, 1.0).unwrap();
    let study = h_limit_study(&phi, &drift, &[0.6, 0.55, 0.52]).unwrap();
    let gaps: Vec<f64> = study.rows.iter().map(|r| r.gap_tilde).collect();
    let approaching = gaps.windows(2).all(|w| w[1] < w[0]);
    let ratio = study.half_ratio();
    let want = E * (1.0 + (-2.0f64).exp()) / 2.0;
    let values: Vec<String> = study.rows.iter().map(|r| format!("{:.5}", r.s_h)).collect();
    (
        approaching && gaps[2] < 0.05 && (ratio - want).abs() < 1e-3,
        format!(
            "S^H at 0.6/0.55/0.52 = {}, tilde S = {:.5}, final gap {:.2}%; tilde/plain ratio {ratio:.5} vs {want:.5}",
            values.join("/"),
            study.s_tilde_half,
            100.0 * gaps[2]
        ),
    )
}

fn fbm_spec(eps: f64) -> SlowFastSpec {
    let model = BuiltinModel::new(Dims { slow: 1, fast: 0, fbm: 1, bm: 0 }).with_sigma1(vec![Func::constant(1.0)]);
    SlowFastSpec::new(Arc::new(model), 0.7, eps, eps.powf(1.5), vec![0.0], vec![], None).unwrap()
}

fn gaussian_tail_asymptotics() -> Outcome {
    let start = Instant::now();
    let (h, eps) = (0.7, 0.01f64);
    // P(sqrt(eps) B_1 >= a) = 1e-3 at z = 3.0902.
    let a = 3.0902 * eps.sqrt();
    let rate = gaussian_exceedance_rate(a, 0.0, 1.0, 1.0, h);
    let run = |schedule: Vec<(f64, f64)>, trials: usize| {
        estimate_rare_event(&RareEventExperiment {
            spec: fbm_spec(eps),
            component: 0,
            threshold: a,
            schedule,
            trials,
            seed: 31,
            grid: McGrid { n: 17, horizon: 1.0, substeps: Some(1) },
            exec: seq(),
            prediction: Some(rate),
            pilot_trials: 0,
        })
        .unwrap()
    };
    let main = run(vec![(eps, eps.powf(1.5))], 1_000_000);
    let row = &main.rows[0];
    let est = row.estimate.unwrap_or(f64::INFINITY);
    let rel = (est - rate).abs() / rate;
    // Mills-ratio prefactor: -eps log P = a^2/2 + eps log(z sqrt(2 pi)) to leading order.
    let z = a / eps.sqrt();
    let mills = rate + eps * (z * (2.0 * PI).sqrt()).ln();

    let sched: Vec<(f64, f64)> = [0.1f64, 0.05, 0.03].iter().map(|&e| (e, e * e.sqrt())).collect();
    let table = run(sched, 200_000);
    let ests: Vec<f64> = table.rows.iter().filter_map(|r| r.estimate).collect();
    let above = ests.iter().all(|&e| e >= rate);
    let secs = start.elapsed().as_secs_f64();
    (
        rel <= 0.25 && secs < 600.0,
        format!(
            "p_hat {:.2e}, -eps log p_hat {est:.4} vs rate {rate:.4} (relative gap {:.0}%, prefactor-corrected {mills:.4}); \
             schedule estimates {:?}, stabilizing {:?}, all above the rate {above}",
            row.p_hat,
            100.0 * rel,
            ests.iter().map(|e| (e * 1e4).round() / 1e4).collect::<Vec<_>>(),
            table.stabilizing
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 5

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
n = 33

[schedule]
eps = [0.2, 0.1, 0.05]

[[experiments]]
kind = "sample-fbm"
name = "fbm"
paths = 3
dim = 2

[[experiments]]
kind = "simulate"
name = "sim"
trials = 6
save_paths = 2

[[experiments]]
kind = "poisson"
name = "cell"

[[experiments]]
kind = "rate"
name = "rate"
method = "general"
path = { kind = "psi-poly", coeffs = [0.0, 0.0, 1.0] }

[[experiments]]
kind = "limit-study"
name = "limit"
hurst_list = [0.7, 0.6]
path = { kind = "psi-poly", coeffs = [0.0, 0.0, 1.0] }

[[experiments]]
kind = "laplace"
name = "laplace"
trials = 1000
functional = { kind = "terminal-penalty", rho = 1.0, target = [0.5] }

[[experiments]]
kind = "rare-event"
name = "tail"
threshold = 1.2
trials = 1000
pilot_trials = 0
"#;

fn run_cli(config: &Path, out: &Path, parallel: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fracld"))
        .args(["--parallel", &parallel.to_string(), "run", "--config"])
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("created_unix");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("all.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let mut snaps = Vec::new();
    for (i, threads) in [1, 1, 2].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        if let Err(e) = run_cli(&cfg, &out, threads) {
            return (false, format!("run {i} failed: {e}"));
        }
        snaps.push(snapshot(&out));
    }
    let names: Vec<&str> = snaps[0].iter().map(|(n, _)| n.as_str()).collect();
    let same = snaps.windows(2).all(|w| w[0] == w[1]);
    (
        same && names.len() > 10,
        format!("{} files identical across two sequential runs and one 2-thread run: {same}", names.len()),
    )
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
