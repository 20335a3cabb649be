//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use num_bigint::BigUint;
use num_rational::Ratio;
use rand::Rng;
use rand_distr::StandardNormal;

use upcycled_fl::analysis::{
    self, c1, constants, theorem1_bound_recorded, ConvergenceParams, TrajectoryDiagnostics,
};
use upcycled_fl::data::{generate_synthetic, Sample, SyntheticSpec, TrainingReads};
use upcycled_fl::fl::{
    initial_model, run, CoefficientSchedule, RoundObserver, RoundPlan, RoundRecord, RunConfig,
};
use upcycled_fl::harness::{
    self, compare, diagnose_seed, parse_config, run_suite_with, ExperimentConfig, SeedRun,
    SummaryReport,
};
use upcycled_fl::models::{LocalObjective, ModelVector, Shape};
use upcycled_fl::privacy::{
    clip, gaussian_perturb, objective_eps, output_delta_of_eps, output_eps_of_delta,
    sample_exp_norm_noise, Parity,
};
use upcycled_fl::rng::{stream, Purpose};

type Check = Result<(bool, String), String>;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/acceptance")
        .join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn suite(name: &str) -> Result<(SummaryReport, Vec<SeedRun>), String> {
    let cfg = config(name);
    run_suite_with(&cfg, None, |_| Box::new(upcycled_fl::fl::NoObserver)).map_err(|e| e.to_string())
}

fn mean_of(stat: Option<upcycled_fl::harness::Stat>) -> Result<f64, String> {
    stat.map(|s| s.mean).ok_or_else(|| "missing statistic".to_string())
}

// ---------------------------------------------------------------------------

fn c1_reproduction() -> Result<((bool, String), Vec<SeedRun>), String> {
    let t0 = Instant::now();
    let (report, runs) = suite("c1_upcycled_fedprox_iid.toml")?;
    let elapsed = t0.elapsed().as_secs_f64();
    let (base, _) = suite("c1_fedprox_iid.toml")?;
    let acc = report.final_test_acc.ok_or("no accuracy")?;
    let pass = report.all_completed && acc.mean >= 0.94 && elapsed <= 180.0;
    Ok((
        (
            pass,
            format!(
                "upcycled-fedprox acc {:.4} ± {:.4} over {} seeds (FedProx M=80: {:.4}); {:.1} s",
                acc.mean,
                acc.std.unwrap_or(0.0),
                acc.n,
                mean_of(base.final_test_acc)?,
                elapsed
            ),
        ),
        runs,
    ))
}

fn c2_heterogeneity() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (base, cand) in [
        ("c2_fedprox_syn11.toml", "c2_upcycled_fedprox_syn11.toml"),
        ("c2_fedavg_syn11.toml", "c2_upcycled_fedavg_syn11.toml"),
    ] {
        let (b, _) = suite(base)?;
        let (c, _) = suite(cand)?;
        let cmp = compare(&b, &c).map_err(|e| e.to_string())?;
        let delta = cmp.mean_test_acc_delta.ok_or("no accuracy delta")?;
        pass &= b.all_completed && c.all_completed && delta >= -0.005;
        parts.push(format!(
            "{} {:.4} vs {} {:.4} (Δ {:+.4}, wins {}/4)",
            c.label,
            mean_of(c.final_test_acc)?,
            b.label,
            mean_of(b.final_test_acc)?,
            delta,
            cmp.acc_wins
        ));
    }
    Ok((pass, parts.join("; ")))
}

/// Recomputes every even round from the clients' own uploads.
struct EvenRoundOracle {
    coefficient: f64,
    previous_global: ModelVector,
    last_locals: Vec<(ModelVector, f64)>,
    last_aggregate: Option<ModelVector>,
    checked: usize,
    max_err: f64,
}

impl RoundObserver for EvenRoundOracle {
    fn on_training_round(
        &mut self,
        _round: usize,
        _plan: &RoundPlan,
        locals: &[(usize, ModelVector)],
        weights: &[f64],
        aggregate: &ModelVector,
    ) {
        self.last_locals = locals
            .iter()
            .zip(weights)
            .map(|((_, w), p)| (w.clone(), *p))
            .collect();
        self.last_aggregate = Some(aggregate.clone());
    }

    fn on_extrapolation(
        &mut self,
        _round: usize,
        current: &ModelVector,
        previous: &ModelVector,
        _coefficient: f64,
        result: &ModelVector,
    ) {
        let agg = self.last_aggregate.take().expect("even round after a training round");
        let dim = agg.len();
        let drift: Vec<f64> = (0..dim)
            .map(|j| agg.values()[j] - self.previous_global.values()[j])
            .collect();
        let total: f64 = self.last_locals.iter().map(|(_, p)| p).sum();
        let mut err: f64 = 0.0;
        for j in 0..dim {
            let per_client: f64 = self
                .last_locals
                .iter()
                .map(|(w, p)| p * (w.values()[j] + self.coefficient * drift[j]))
                .sum::<f64>()
                / total;
            err = err
                .max((per_client - result.values()[j]).abs())
                .max((current.values()[j] - agg.values()[j]).abs())
                .max((previous.values()[j] - self.previous_global.values()[j]).abs());
        }
        self.max_err = self.max_err.max(err);
        self.checked += 1;
        self.previous_global = result.clone();
    }
}

fn c3_even_round_equivalence() -> Check {
    let cfg = config("c1_upcycled_fedprox_iid.toml");
    let seed = cfg.seeds[0];
    let run_cfg = cfg.run_for_seed(seed);
    let coefficient = match run_cfg.upcycled.map(|u| u.schedule) {
        Some(CoefficientSchedule::Prox { mu, lambda }) => mu / (mu + lambda.lambda0),
        other => return Err(format!("unexpected schedule {other:?}")),
    };
    let ds = cfg.dataset.build(seed).map_err(|e| e.to_string())?;
    let mut oracle = EvenRoundOracle {
        coefficient,
        previous_global: initial_model(&run_cfg, ds.model_shape()),
        last_locals: Vec::new(),
        last_aggregate: None,
        checked: 0,
        max_err: 0.0,
    };
    run(&ds, &run_cfg, &mut oracle).map_err(|e| e.error.to_string())?;
    let expected = run_cfg.rounds / 2;
    Ok((
        oracle.checked == expected && oracle.max_err <= 1e-10,
        format!(
            "{}/{} even rounds, max coordinate error {:.3e}",
            oracle.checked, expected, oracle.max_err
        ),
    ))
}

#[derive(Default)]
struct Aggregates(Vec<ModelVector>);

impl RoundObserver for Aggregates {
    fn on_training_round(
        &mut self,
        _round: usize,
        _plan: &RoundPlan,
        _locals: &[(usize, ModelVector)],
        _weights: &[f64],
        aggregate: &ModelVector,
    ) {
        self.0.push(aggregate.clone());
    }
}

fn c4_zero_coefficient() -> Check {
    let cfg = config("c1_upcycled_fedprox_iid.toml");
    let mut compared = 0;
    let mut identical = true;
    for &seed in &cfg.seeds {
        let ds = cfg.dataset.build(seed).map_err(|e| e.to_string())?;
        let mut upcycled = cfg.run_for_seed(seed);
        let spec = upcycled.upcycled.as_mut().ok_or("config has no upcycled section")?;
        spec.schedule = CoefficientSchedule::Fixed { c0: 0.0 };
        let baseline = RunConfig {
            upcycled: None,
            rounds: upcycled.rounds / 2,
            ..upcycled.clone()
        };
        let mut a = Aggregates::default();
        let mut b = Aggregates::default();
        let ua = run(&ds, &upcycled, &mut a).map_err(|e| e.error.to_string())?;
        let ub = run(&ds, &baseline, &mut b).map_err(|e| e.error.to_string())?;
        let bits = |v: &ModelVector| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        identical &= a.0.len() == b.0.len()
            && a.0.iter().zip(&b.0).all(|(x, y)| bits(x) == bits(y))
            && bits(&ua.final_global) == bits(&ub.final_global);
        let odd_losses: Vec<u64> = ua
            .records
            .iter()
            .filter(|r| r.parity == Parity::Odd)
            .map(|r| r.train_loss.to_bits())
            .collect();
        let base_losses: Vec<u64> = ub.records.iter().map(|r| r.train_loss.to_bits()).collect();
        identical &= odd_losses == base_losses;
        compared += a.0.len();
    }
    Ok((
        identical,
        format!("{compared} odd-round globals over {} seeds bitwise equal: {identical}", cfg.seeds.len()),
    ))
}

// ---------------------------------------------------------------------------

/// `atanh(1/k)` scaled by `scale`, by the odd power series.
fn atanh_inv(k: u64, scale: &BigUint) -> BigUint {
    let k = BigUint::from(k);
    let k2 = &k * &k;
    let mut power = k.clone();
    let mut sum = BigUint::from(0u32);
    let mut n = 1u64;
    loop {
        let term = scale / (&power * BigUint::from(n));
        if term == BigUint::from(0u32) {
            return sum;
        }
        sum += term;
        power *= &k2;
        n += 2;
    }
}

/// `2√(q·ln(1/δ)) + q` for rational `q` and `δ = 10^-d`, in fixed point.
fn eps_high_precision(q_num: u64, q_den: u64, delta_exp: u64) -> f64 {
    let digits = 60u32;
    let scale = BigUint::from(10u32).pow(digits);
    let ln2 = atanh_inv(3, &scale) * 2u32;
    let ln_5_4 = atanh_inv(9, &scale) * 2u32;
    let ln10 = ln2 * 3u32 + ln_5_4;
    let ln_inv_delta = ln10 * delta_exp;
    let q = &scale * q_num / q_den;
    let x = &q * &ln_inv_delta / &scale;
    let eps = (x * &scale).sqrt() * 2u32 + q;
    let keep = BigUint::from(10u32).pow(digits - 18);
    let mantissa: f64 = (eps / keep).to_string().parse().unwrap();
    mantissa / 1e18
}

fn c5_accountant() -> Check {
    let mut rng = stream(5, Purpose::Probe, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rounds = rng.random_range(1..=500usize);
        let tau = 10f64.powf(rng.random_range(-1.0..1.0));
        let sigma = 10f64.powf(rng.random_range(-1.0..1.0));
        let n = rng.random_range(10..=10_000usize);
        let delta = 10f64.powf(rng.random_range(-12.0..-0.5));
        let eps = output_eps_of_delta(rounds, tau, sigma, n, delta).map_err(|e| e.to_string())?;
        let back = output_delta_of_eps(rounds, tau, sigma, n, eps).map_err(|e| e.to_string())?;
        worst = worst.max((back - delta).abs() / delta);
        let delta2 = output_delta_of_eps(rounds, tau, sigma, n, eps * 1.5).map_err(|e| e.to_string())?;
        if delta2 > 0.0 && delta2 < 1.0 {
            let eps2 = output_eps_of_delta(rounds, tau, sigma, n, delta2).map_err(|e| e.to_string())?;
            worst = worst.max((eps2 - eps * 1.5).abs() / (eps * 1.5));
        }
    }
    let a = worst <= 1e-12;

    // M=50, τ=1, σ=1, |D|=100: q = 50/(2·100²) = 1/400.
    let eps = output_eps_of_delta(50, 1.0, 1.0, 100, 1e-5).map_err(|e| e.to_string())?;
    let oracle = eps_high_precision(50, 20_000, 5);
    let b = (eps - oracle).abs() <= 1e-6;

    let per_round = (Ratio::new(2i64, 1) * Ratio::from(10) * Ratio::from(1) * Ratio::new(1, 2)
        + Ratio::new(28, 10) * Ratio::new(1, 4))
        / (Ratio::from(100) * Ratio::new(1, 2));
    let total: Ratio<i64> = (0..80).map(|_| per_round).sum();
    let float = objective_eps(&[10.0; 80], 1.0, 0.25, 100, 0.5).map_err(|e| e.to_string())?;
    let c = total == Ratio::new(1712, 100) && (float - 17.12).abs() <= 4.0 * f64::EPSILON * 17.12;

    Ok((
        a && b && c,
        format!(
            "(a) max round-trip rel err {worst:.2e}: {}; (b) ε {eps:.10} vs oracle {oracle:.10}: {}; \
             (c) rational {total} = 17.12, f64 {float}: {}",
            ok(a),
            ok(b),
            ok(c)
        ),
    ))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------------------

fn c6_output_privacy() -> Check {
    let (b, _) = suite("c6_fedprox_output.toml")?;
    let (u, _) = suite("c6_upcycled_fedprox_output.toml")?;
    let (bl, ul) = (mean_of(b.final_train_loss)?, mean_of(u.final_train_loss)?);
    let (be, ue) = (mean_of(b.eps_avg)?, mean_of(u.eps_avg)?);
    Ok((
        b.all_completed && u.all_completed && ul < bl && ue < be,
        format!("loss {ul:.4} vs {bl:.4}; ε̄ {ue:.4} vs {be:.4} (upcycled σ=0.8 vs FedProx σ=1.0)"),
    ))
}

fn c7_objective_privacy() -> Check {
    let (b, _) = suite("c7_fedprox_objective.toml")?;
    let (u, _) = suite("c7_upcycled_fedprox_objective.toml")?;
    let (bl, ul) = (mean_of(b.final_train_loss)?, mean_of(u.final_train_loss)?);
    let (be, ue) = (mean_of(b.eps_avg)?, mean_of(u.eps_avg)?);
    Ok((
        b.all_completed && u.all_completed && ue < be && ul <= 1.05 * bl,
        format!("loss {ul:.4} vs {bl:.4} (limit {:.4}); ε̄ {ue:.3} vs {be:.3} (α 20 vs 10)", 1.05 * bl),
    ))
}

// ---------------------------------------------------------------------------

fn c8_numerical_core() -> Check {
    let mut rng = stream(8, Purpose::Probe, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let shape = Shape::new(rng.random_range(1..6), rng.random_range(2..5));
        let samples: Vec<Sample> = (0..rng.random_range(1..8))
            .map(|_| Sample {
                features: (0..shape.dim_x).map(|_| rng.sample(StandardNormal)).collect(),
                label: rng.random_range(0..shape.classes),
            })
            .collect();
        let draw = |rng: &mut upcycled_fl::rng::Stream| {
            ModelVector::from_values(shape, (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect())
                .unwrap()
        };
        let omega = draw(&mut rng);
        let anchor = draw(&mut rng);
        let linear = draw(&mut rng);
        let mu = rng.random_range(0.0..2.0);
        let obj = LocalObjective::new(&samples, shape)
            .with_prox(mu, &anchor)
            .and_then(|o| o.with_linear(&linear))
            .map_err(|e| e.to_string())?;
        let g = obj.gradient(&omega).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for j in 0..shape.len() {
            let mut plus = omega.values().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let f = |v: Vec<f64>| obj.loss(&ModelVector::from_values(shape, v).unwrap()).unwrap();
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            worst = worst.max((g.values()[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    let grad_ok = worst <= 1e-5;

    let shape = Shape::new(9, 4);
    let mut clip_violations = 0;
    for _ in 0..10_000 {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let tau = 10f64.powf(rng.random_range(-2.0..2.0));
        let v = ModelVector::from_values(
            shape,
            (0..shape.len()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap();
        let c = clip(&v, tau);
        let inside = c.norm() <= tau * (1.0 + 1e-12);
        let kept = v.norm() > tau || c == v;
        let parallel = c.values().iter().zip(v.values()).all(|(a, b)| a * b >= 0.0);
        if !(inside && kept && parallel) {
            clip_violations += 1;
        }
    }

    let n = 100_000;
    let sigma = 0.7;
    let zero = ModelVector::zeros(shape);
    let mut noise_rng = stream(8, Purpose::OutputNoise, 0, 0);
    let sq: Vec<f64> = (0..n).map(|_| gaussian_perturb(&zero, sigma, &mut noise_rng).norm_sq()).collect();
    let (gm, gse) = mean_se(&sq);
    let g_target = shape.len() as f64 * sigma * sigma;
    let gauss_ok = (gm - g_target).abs() <= 3.0 * gse;

    let alpha = 4.0;
    let mut obj_rng = stream(8, Purpose::ObjectiveNoise, 0, 0);
    let norms: Vec<f64> = (0..n)
        .map(|_| sample_exp_norm_noise(shape.len(), alpha, &mut obj_rng).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let (am, ase) = mean_se(&norms);
    let a_target = shape.len() as f64 / alpha;
    let gamma_ok = (am - a_target).abs() <= 3.0 * ase;

    Ok((
        grad_ok && clip_violations == 0 && gauss_ok && gamma_ok,
        format!(
            "grad max rel err {worst:.2e}; clip violations {clip_violations}/10000; \
             E‖n‖² {gm:.4} vs {g_target:.4} (SE {gse:.4}); E‖n‖ {am:.4} vs {a_target:.4} (SE {ase:.4})"
        ),
    ))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

// ---------------------------------------------------------------------------

fn c9_diagnostics() -> Check {
    let mut min_b = f64::INFINITY;
    let mut rng = stream(9, Purpose::Probe, 0, 0);
    for (beta, gamma, iid) in [(0.0, 0.0, true), (0.0, 0.0, false), (0.5, 0.5, false), (1.0, 1.0, false)] {
        for seed in 0..4 {
            let ds = generate_synthetic(&SyntheticSpec::standard(beta, gamma, iid, seed))
                .map_err(|e| e.to_string())?;
            let shape = ds.model_shape();
            let mut models = vec![ModelVector::zeros(shape)];
            for _ in 0..3 {
                models.push(
                    ModelVector::from_values(shape, (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect())
                        .unwrap(),
                );
            }
            for m in &models {
                min_b = min_b.min(analysis::estimate_dissimilarity(&ds, m).map_err(|e| e.to_string())?);
            }
        }
    }
    let b_ok = min_b >= 1.0 - 1e-9;

    let base = ConvergenceParams {
        l: 1.3,
        b: 0.0,
        mu: 0.7,
        rho: 0.7,
        k: 9,
        lambda: 1.0,
        h: None,
        d: None,
    };
    let c1_ok = [0.01, 0.7, 1.0, 3.0, 250.0]
        .iter()
        .all(|&mu| c1(&ConvergenceParams { mu, ..base }) == 1.0 / mu);

    let sweep: Vec<(f64, f64)> = (0..20)
        .map(|i| {
            let lambda = 10f64.powf(-2.0 + 4.0 * i as f64 / 19.0);
            let c = constants(&ConvergenceParams { lambda, b: 1.2, ..base });
            (c.c2, c.c3)
        })
        .collect();
    let decreasing = sweep.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);

    let cfg = config("c9_upcycled_fedprox_convex.toml");
    let (report, runs) =
        run_suite_with(&cfg, None, |_| Box::new(upcycled_fl::fl::NoObserver)).map_err(|e| e.to_string())?;
    let mut bound_ok = report.all_completed;
    let mut lines = Vec::new();
    for (summary, run) in report.seeds.iter().zip(&runs) {
        let fstar = summary.best_train_loss.ok_or("no train loss")?;
        let t = &run.output.trajectory;
        let d = diagnose_seed(&cfg, run.seed, t, fstar, 32).map_err(|e| e.to_string())?;
        let holds = d.c1.is_some_and(|c| c > 0.0) && d.bound_holds == Some(true);
        bound_ok &= holds;
        let params = d.params.ok_or("no parameters")?;
        let b_max = d.b_hat.iter().filter_map(|(_, b)| *b).fold(params.b, f64::max);
        let conservative = theorem1_bound_recorded(
            &TrajectoryDiagnostics::from_trajectory(t),
            &ConvergenceParams { b: b_max, ..params },
            t.initial_loss - fstar,
            t.points.len(),
        )
        .map(|b| format!("{:.3}", b.total))
        .unwrap_or_else(|e| e.to_string());
        lines.push(format!(
            "seed {} C1 {:.3} min‖∇f‖² {:.2e} ≤ RHS {:.3} (B max {b_max:.2}: RHS {conservative})",
            run.seed,
            d.c1.unwrap_or(f64::NAN),
            d.min_grad_norm_sq.unwrap_or(f64::NAN),
            d.bound.map_or(f64::NAN, |b| b.total),
        ));
    }

    Ok((
        b_ok && c1_ok && decreasing && bound_ok,
        format!(
            "min B̂ {min_b:.6}: {}; C1(B=0)=1/μ: {}; C2,C3 decreasing over 20 λ: {}; bound: {}",
            ok(b_ok),
            ok(c1_ok),
            ok(decreasing),
            lines.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------------------

struct ReadWatch {
    reads: TrainingReads,
    last: u64,
    even_reads: u64,
    odd_without_reads: usize,
}

impl RoundObserver for ReadWatch {
    fn on_record(&mut self, record: &RoundRecord) {
        let now = self.reads.get();
        let delta = now - self.last;
        self.last = now;
        match record.parity {
            Parity::Even => self.even_reads += delta,
            Parity::Odd if delta == 0 => self.odd_without_reads += 1,
            Parity::Odd => {}
        }
    }
}

fn c10_cost_asymmetry(c1_runs: &[SeedRun]) -> Check {
    let walls = |parity: Parity| {
        let w: Vec<f64> = c1_runs
            .iter()
            .flat_map(|r| r.output.records.iter())
            .filter(|r| r.parity == parity)
            .map(|r| r.wall_s)
            .collect();
        w.iter().sum::<f64>() / w.len().max(1) as f64
    };
    let (odd, even) = (walls(Parity::Odd), walls(Parity::Even));
    let ratio = even / odd;

    let cfg = config("c1_upcycled_fedprox_iid.toml");
    let mut even_reads = 0;
    let mut odd_without_reads = 0;
    for &seed in &cfg.seeds {
        let ds = cfg.dataset.build(seed).map_err(|e| e.to_string())?;
        let mut watch = ReadWatch {
            reads: ds.training_reads(),
            last: ds.training_reads().get(),
            even_reads: 0,
            odd_without_reads: 0,
        };
        run(&ds, &cfg.run_for_seed(seed), &mut watch).map_err(|e| e.error.to_string())?;
        even_reads += watch.even_reads;
        odd_without_reads += watch.odd_without_reads;
    }
    Ok((
        ratio <= 0.05 && even_reads == 0 && odd_without_reads == 0,
        format!(
            "even/odd wall {:.2e} s / {:.2e} s = {:.4}; training reads on even rounds {even_reads}",
            even, odd, ratio
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    if let Err(e) = harness::configure_threads() {
        eprintln!("{e}");
    }
    let mut results: Vec<(&str, Check)> = Vec::new();
    let (c1, c1_runs) = match c1_reproduction() {
        Ok((r, runs)) => (Ok(r), runs),
        Err(e) => (Err(e), Vec::new()),
    };
    results.push(("C1 Syn(iid) Upcycled-FedProx accuracy", c1));
    results.push(("C2 heterogeneity ordering on Syn(1,1)", c2_heterogeneity()));
    results.push(("C3 even-round equivalence", c3_even_round_equivalence()));
    results.push(("C4 c=0 degeneration", c4_zero_coefficient()));
    results.push(("C5 accountant correctness", c5_accountant()));
    results.push(("C6 output-perturbation ordering", c6_output_privacy()));
    results.push(("C7 objective-perturbation ordering", c7_objective_privacy()));
    results.push(("C8 numerical core", c8_numerical_core()));
    results.push(("C9 diagnostics", c9_diagnostics()));
    results.push(("C10 cost asymmetry", c10_cost_asymmetry(&c1_runs)));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok((true, detail)) => println!("PASS {name}: {detail}"),
            Ok((false, detail)) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: error: {e}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
