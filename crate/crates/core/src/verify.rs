//! The acceptance suite. Each criterion is a plain function so the CLI and
//! the integration tests run exactly the same checks.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::asymptotics::{gaussian_lambda, joint_law, population, PopulationModel};
use crate::commands::{self, law_inputs, risk_problem, LawInputs};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::estimators::{build_kx, lse, named_res_with, Estimator};
use crate::io::{fmt_num, Table};
use crate::matcore::{eig_extremes, frobenius, identity, Mat};
use crate::model::{generate, make_restricted_b, DesignSpec, ErrorFamily, Model, ModelConfig, Restriction};
use crate::montecarlo::{compare_law, lemma_suite, risk_diagnostic, run, with_workers};
use crate::risk::{RiskProblem, Verdict, WeightMatrix};
use crate::seeding::{replication_rng, stream_seed, SimRng};

pub const LAW_COV_TOL: f64 = 0.15;
pub const LAW_MEAN_Z: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    /// Deterministic description of the measured quantities.
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {} {}: {} ({:.1}s of {}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

/// Outcome of a check before timing is attached.
struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(id: u8, name: &'static str, budget_s: u64, f: impl FnOnce() -> Result<Outcome>) -> CriterionResult {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    let (pass, detail) = match out {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let within = elapsed <= budget;
    CriterionResult {
        id,
        name,
        pass: pass && within,
        detail: if within {
            detail
        } else {
            format!("{detail}; exceeded the time budget")
        },
        elapsed,
        budget,
    }
}

fn rand_mat(rng: &mut SimRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_spd(rng: &mut SimRng, p: usize) -> Mat {
    let a = rand_mat(rng, p, p);
    &a * a.transpose() + identity(p) * 0.5
}

fn gaussian(rng: &mut SimRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Restriction exactness over random instances.
pub fn criterion_1(seed: u64) -> CriterionResult {
    timed(1, "restriction exactness", 5, || {
        let mut rng = replication_rng(stream_seed(seed, "criterion-1"), 0);
        let mut worst = 0.0_f64;
        let mut failures = 0;
        for _ in 0..100 {
            let p = rng.random_range(1..=5);
            let q = rng.random_range(1..=4);
            let r1 = rng.random_range(1..=p);
            let r2 = rng.random_range(1..=q);
            let n = 60 + 10 * p;
            let x = gaussian(&mut rng, n, p);
            let z = gaussian(&mut rng, n, q);
            let restr = Restriction::new(
                rand_mat(&mut rng, r1, p),
                rand_mat(&mut rng, q, r2),
                rand_mat(&mut rng, r1, r2) * 3.0,
                Mat::zeros(r1, r2),
            )?;
            let q0 = rand_spd(&mut rng, p);
            let kxp = build_kx(&x, 0.05, n)?;
            let est = named_res_with(&x, &z, &kxp, &restr, Some(&q0))?;
            let tol = 1e-8 * (1.0 + frobenius(&restr.theta));
            for which in [Estimator::B2, Estimator::B3, Estimator::B4, Estimator::Generic(q0.clone())] {
                let b = est.get(&which).expect("computed");
                let gap = frobenius(&restr.residual(b));
                worst = worst.max(gap / tol);
                if gap > tol {
                    failures += 1;
                }
            }
        }
        Ok(Outcome {
            pass: failures == 0,
            detail: format!("100 instances, worst residual {} of tolerance, {failures} violations", fmt_num(worst)),
        })
    })
}

/// Median UE error shrinks like `n^{-1/2}`.
pub fn criterion_2(cfg: &Config, workers: Option<usize>) -> CriterionResult {
    timed(2, "UE root-n rate", 60, || {
        let mut medians = Vec::new();
        for (k, n) in [500usize, 2000, 8000].into_iter().enumerate() {
            let mut plan = cfg.plan()?;
            plan.cfg = plan.cfg.with_n(n);
            plan.reps = 200;
            plan.estimators = vec![Estimator::Ue];
            plan.weight = WeightMatrix::identity(cfg.p);
            plan.master_seed = replication_rng(stream_seed(cfg.master_seed, "criterion-2"), k as u64).random();
            let s = run(&plan, workers)?;
            let norms = s.per_rep_losses[0].iter().map(|l| (l / n as f64).sqrt()).collect();
            medians.push(median(norms));
        }
        let ratios = [medians[1] / medians[0], medians[2] / medians[1]];
        let pass = ratios.iter().all(|r| (0.35..=0.70).contains(r));
        Ok(Outcome {
            pass,
            detail: format!(
                "median errors {} / {} / {}, ratios {} and {}",
                fmt_num(medians[0]),
                fmt_num(medians[1]),
                fmt_num(medians[2]),
                fmt_num(ratios[0]),
                fmt_num(ratios[1])
            ),
        })
    })
}

pub const CRITERION_3_REPS: usize = 21;

/// The naive LSE converges to `KB`, not `B`.
pub fn criterion_3(cfg: &Config, workers: Option<usize>) -> CriterionResult {
    timed(3, "naive LSE inconsistency", 20, || {
        let mut mc = cfg.model_config()?.with_n(8000);
        mc.sigma_delta2 = 0.5;
        let model = Model::new(mc.clone())?;
        let pm = population(&model)?;
        let (lo, hi) = eig_extremes(&pm.sigma)?;
        let b = make_restricted_b(&mc, &cfg.restriction()?, &cfg.b_seed()?)?;
        let kb = &pm.k * &b;
        let seed = stream_seed(cfg.master_seed, "criterion-3");
        let pairs: Vec<(f64, f64)> = with_workers(workers, || {
            (0..CRITERION_3_REPS as u64)
                .into_par_iter()
                .map(|r| {
                    let ds = generate(&model, &b, &mut replication_rng(seed, r))?;
                    let bh = lse(&ds.x, &ds.z)?;
                    Ok((frobenius(&(&bh - &kb)), frobenius(&(&bh - &b))))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let gap = median(pairs.iter().map(|p| p.0).collect());
        let bias = median(pairs.iter().map(|p| p.1).collect());
        Ok(Outcome {
            pass: gap < 0.05 && bias > 10.0 * gap,
            detail: format!(
                "median |B_lse - KB| {}, median |B_lse - B| {}, cond(Sigma) {}",
                fmt_num(gap),
                fmt_num(bias),
                fmt_num(hi / lo)
            ),
        })
    })
}

/// Empirical joint law of UE, B2, B3, B4 against `AᵢΛ̂Aⱼ'` and the mean shifts.
pub fn criterion_4(cfg: &Config, inputs: &LawInputs, workers: Option<usize>) -> CriterionResult {
    timed(4, "joint law agreement", 300, || {
        let mut plan = cfg.plan()?;
        plan.estimators = vec![Estimator::Ue, Estimator::B2, Estimator::B3, Estimator::B4];
        if frobenius(&plan.restr.theta0) == 0.0 {
            return Err(Error::Config("criterion 4 needs a nonzero theta0".into()));
        }
        let s = run(&plan, workers)?;
        let law = joint_law(
            &inputs.pm,
            &inputs.lambda.lambda,
            &plan.restr,
            &plan.estimators,
            &plan.restr.theta0,
        )?;
        let cmp = compare_law(&s, &law, LAW_COV_TOL, LAW_MEAN_Z)?;
        let tol = 1e-8 * (1.0 + frobenius(&plan.restr.theta));
        let exact = s.max_constraint_violation <= tol;
        let risk = risk_diagnostic(&s, &law, &plan.weight)?;
        let worst_risk = risk.iter().fold(0.0_f64, |m, c| m.max(c.rel_gap));
        Ok(Outcome {
            pass: cmp.pass() && exact,
            detail: format!(
                "{} reps at n = {}, worst block error {}, worst mean z {}, constraint residual {}, risk gap {}",
                s.rep_count - s.excluded,
                plan.cfg.n,
                fmt_num(cmp.max_block_error),
                fmt_num(cmp.max_mean_z),
                fmt_num(s.max_constraint_violation),
                fmt_num(worst_risk)
            ),
        })
    })
}

fn random_risk_instance(rng: &mut SimRng) -> Result<(RiskProblem, Mat, Mat)> {
    let p = rng.random_range(2..=5);
    let q = rng.random_range(1..=4);
    let r1 = rng.random_range(1..p);
    let r2 = rng.random_range(1..=q);
    let sigma = rand_spd(rng, p);
    let (lo, _) = eig_extremes(&sigma)?;
    let pm = PopulationModel::from_sigma(sigma, rng.random_range(0.0..0.9) * lo)?;
    let g = rand_mat(rng, p * q, p * q);
    let restr = Restriction::new(
        rand_mat(rng, r1, p),
        rand_mat(rng, q, r2),
        rand_mat(rng, r1, r2),
        Mat::zeros(r1, r2),
    )?;
    let w = WeightMatrix::new(rand_spd(rng, p))?;
    let prob = RiskProblem::new(pm, &g * g.transpose(), restr, w)?;
    Ok((prob, rand_spd(rng, p), rand_mat(rng, r1, r2) * 2.0))
}

/// Decomposition ADR against joint-law ADR, and the quadratic-term identity.
pub fn criterion_5(seed: u64) -> CriterionResult {
    timed(5, "ADR decomposition identity", 10, || {
        let mut rng = replication_rng(stream_seed(seed, "criterion-5"), 0);
        let (mut worst_adr, mut worst_quad) = (0.0_f64, 0.0_f64);
        for _ in 0..100 {
            let (prob, q0, theta0) = random_risk_instance(&mut rng)?;
            let r = prob.report(&q0, &theta0)?;
            let direct = prob.adr_direct(&q0, &theta0)?;
            worst_adr = worst_adr.max((r.adr_re - direct).abs() / direct.abs());
            let quad = prob.mean_quadratic(&q0, &theta0)?;
            worst_quad = worst_quad.max((quad - r.quadratic).abs() / quad.abs().max(1.0));
        }
        Ok(Outcome {
            pass: worst_adr <= 1e-8 && worst_quad <= 1e-10,
            detail: format!(
                "100 instances, worst relative ADR gap {}, worst quadratic gap {}",
                fmt_num(worst_adr),
                fmt_num(worst_quad)
            ),
        })
    })
}

/// A model-generated instance with the analytic Gaussian `Λ` and `W = I`.
fn model_risk_instance(rng: &mut SimRng) -> Result<RiskProblem> {
    let p = rng.random_range(2..=4);
    let q = rng.random_range(1..=3);
    let mc = ModelConfig {
        n: 500,
        p,
        q,
        sigma_eps2: rng.random_range(0.1..2.0),
        sigma_delta2: rng.random_range(0.0..0.5),
        sigma_psi2: rng.random_range(0.0..1.0),
        design: DesignSpec::Uniform {
            low: -1.0,
            high: 1.0,
            seed: rng.random(),
            mix: Some(rand_mat(rng, p, p) * 1.5 + identity(p)),
        },
        error_family: ErrorFamily::Gaussian,
    };
    let model = Model::new(mc)?;
    let b = rand_mat(rng, p, q) * 2.0;
    let r1 = rng.random_range(1..p);
    let r2 = rng.random_range(1..=q);
    let restr = Restriction::new(
        rand_mat(rng, r1, p),
        rand_mat(rng, q, r2),
        rand_mat(rng, r1, r2),
        Mat::zeros(r1, r2),
    )?;
    RiskProblem::new(
        population(&model)?,
        gaussian_lambda(&model, &b)?,
        restr,
        WeightMatrix::identity(p),
    )
}

/// Dominance implications on both sides of the band, and `f₁ ≥ 0`.
pub fn criterion_6(seed: u64) -> CriterionResult {
    timed(6, "dominance thresholds", 10, || {
        let mut rng = replication_rng(stream_seed(seed, "criterion-6"), 0);
        let (mut checked, mut violations) = (0usize, 0usize);
        let mut worst_f1 = f64::INFINITY;
        let mut instances = 0;
        while instances < 50 {
            let prob = match model_risk_instance(&mut rng) {
                Ok(p) => p,
                // a drawn design can leave σ²_δ above ch_min(Σ); draw again
                Err(Error::NotPd(_)) => continue,
                Err(e) => return Err(e),
            };
            instances += 1;
            for which in [Estimator::B2, Estimator::B3, Estimator::B4] {
                let q0 = prob.pm.q0_for(&which)?;
                let (r1, r2) = prob.restr.theta0.shape();
                let dir = rand_mat(&mut rng, r1, r2);
                let dir = &dir / frobenius(&dir);
                let base = prob.report(&q0, &Mat::zeros(r1, r2))?;
                worst_f1 = worst_f1.min(base.f1 / base.adr_ue);
                let lo = base.lower_threshold.max(0.0);
                let hi = if base.upper_threshold.is_finite() { base.upper_threshold } else { 10.0 * lo };
                let mut grid = vec![0.0, 0.5 * lo, 0.99 * lo, 1.01 * hi, 3.0 * hi];
                // A collapsed band has no interior; its midpoint is the tie point itself.
                if hi > lo * (1.0 + 1e-9) {
                    grid.push(0.5 * (lo + hi));
                }
                for s2 in grid {
                    let r = prob.report(&q0, &(&dir * s2.sqrt()))?;
                    if r.f1 < -1e-8 * r.adr_ue {
                        violations += 1;
                    }
                    if r.theta0_norm2 < r.lower_threshold && r.adr_re > r.adr_ue {
                        violations += 1;
                    }
                    if r.theta0_norm2 > r.upper_threshold && r.adr_re <= r.adr_ue {
                        violations += 1;
                    }
                    match r.verdict {
                        Verdict::ReDominates | Verdict::UeDominates => checked += 1,
                        Verdict::IndeterminateBand => {}
                    }
                }
            }
        }
        Ok(Outcome {
            pass: violations == 0 && worst_f1 >= -1e-8,
            detail: format!(
                "50 instances x 3 estimators, {checked} decided points, {violations} violations, min f1/adr_ue {}",
                fmt_num(worst_f1)
            ),
        })
    })
}

/// Shape of the relative-efficiency curve along the configured direction.
pub fn criterion_7(cfg: &Config, inputs: &LawInputs) -> CriterionResult {
    timed(7, "efficiency curve shape", 10, || {
        let prob = risk_problem(cfg, inputs)?;
        let which = cfg.efficiency_estimator()?;
        let q0 = inputs.pm.q0_for(&which)?;
        let direction = cfg.efficiency_direction()?;
        let scales = commands::efficiency_scales(cfg, &prob, &q0, &direction)?;
        let rows = prob.efficiency_curve(&q0, &direction, &scales)?;
        let origin = prob.report(&q0, &Mat::zeros(direction.nrows(), direction.ncols()))?;
        let (lo, hi) = (origin.lower_threshold, origin.upper_threshold);
        let start = rows.first().map_or(false, |r| r.scale == 0.0 && r.relative_efficiency >= 1.0);
        let decreasing = rows.windows(2).all(|w| w[1].relative_efficiency < w[0].relative_efficiency);
        let below_ok = rows.iter().filter(|r| r.theta0_norm2 < lo).all(|r| r.relative_efficiency >= 1.0);
        let above_ok = rows.iter().filter(|r| r.theta0_norm2 > hi).all(|r| r.relative_efficiency < 1.0);
        let crossing = rows
            .windows(2)
            .find(|w| w[0].relative_efficiency >= 1.0 && w[1].relative_efficiency < 1.0);
        let bracket_ok = crossing.is_some_and(|w| w[0].theta0_norm2 <= hi && w[1].theta0_norm2 >= lo);
        Ok(Outcome {
            pass: start && decreasing && below_ok && above_ok && bracket_ok,
            detail: format!(
                "{} points for {}, RE at origin {}, band [{}, {}], crossing bracket {}",
                rows.len(),
                which.label(),
                fmt_num(rows.first().map_or(f64::NAN, |r| r.relative_efficiency)),
                fmt_num(lo),
                fmt_num(hi),
                crossing.map_or("none".to_string(), |w| format!(
                    "[{}, {}]",
                    fmt_num(w[0].theta0_norm2),
                    fmt_num(w[1].theta0_norm2)
                ))
            ),
        })
    })
}

/// Transformed matrix-normal stacks and the two-block structure.
pub fn criterion_8(seed: u64) -> CriterionResult {
    timed(8, "lemma suite", 60, || {
        let r = lemma_suite(3, 100_000, stream_seed(seed, "criterion-8"))?;
        Ok(Outcome {
            pass: r.pass,
            detail: format!(
                "m = {}, {} draws, worst block error {}, worst mean z {}, two-block errors {} / {} / {}",
                r.m,
                r.draws,
                fmt_num(r.max_block_error),
                fmt_num(r.max_mean_z),
                fmt_num(r.two_block_errors[0]),
                fmt_num(r.two_block_errors[1]),
                fmt_num(r.two_block_errors[2])
            ),
        })
    })
}

pub const CRITERION_9_REPS: usize = 400;

/// Same seed gives identical files; one and eight workers agree.
pub fn criterion_9(cfg: &Config) -> CriterionResult {
    timed(9, "reproducibility", 120, || {
        let mut small = cfg.clone();
        small.simulation.reps = CRITERION_9_REPS;
        small.simulation.lambda_reps = 1000;
        let render = |w: usize| -> Result<commands::Rendered> {
            let mut files = commands::render_simulate(&small, Some(w))?;
            let inputs = law_inputs(&small, Some(w))?;
            files.extend(commands::render_adr(&small, &inputs)?);
            files.extend(with_workers(Some(w), || commands::render_efficiency(&small, &inputs))??);
            Ok(files)
        };
        let a = render(1)?;
        let b = render(1)?;
        let c = render(8)?;
        let same_seed = a == b;
        let same_workers = a == c;
        let mut other = small.clone();
        other.master_seed = other.master_seed.wrapping_add(1);
        let seed_matters = commands::render_simulate(&other, Some(1))? != commands::render_simulate(&small, Some(1))?;
        Ok(Outcome {
            pass: same_seed && same_workers && seed_matters,
            detail: format!(
                "{} files, repeat identical {same_seed}, 1 vs 8 workers identical {same_workers}, new seed differs {seed_matters}",
                a.len()
            ),
        })
    })
}

/// Runs every criterion; errors inside a criterion turn into failures.
pub fn run_all(cfg: &Config, workers: Option<usize>) -> Vec<CriterionResult> {
    let seed = cfg.master_seed;
    let mut out = vec![criterion_1(seed), criterion_2(cfg, workers), criterion_3(cfg, workers)];
    match law_inputs(cfg, workers) {
        Ok(inputs) => {
            out.push(criterion_4(cfg, &inputs, workers));
            out.push(criterion_5(seed));
            out.push(criterion_6(seed));
            out.push(criterion_7(cfg, &inputs));
        }
        Err(e) => {
            out.push(timed(4, "joint law agreement", 300, || Err(e.clone())));
            out.push(criterion_5(seed));
            out.push(criterion_6(seed));
            out.push(timed(7, "efficiency curve shape", 10, || Err(e.clone())));
        }
    }
    out.push(criterion_8(seed));
    out.push(criterion_9(cfg));
    out
}

/// The report files; timings are left out so reruns are byte-identical.
pub fn render(results: &[CriterionResult]) -> commands::Rendered {
    let mut t = Table::new(&["criterion", "name", "pass", "detail"]);
    let mut text = String::new();
    for r in results {
        t.push(vec![
            r.id.to_string(),
            r.name.to_string(),
            r.pass.to_string(),
            format!("\"{}\"", r.detail.replace('"', "'")),
        ]);
        text.push_str(&format!(
            "criterion {} {}: {}\n",
            r.id,
            r.name,
            if r.pass { "pass" } else { "fail" }
        ));
    }
    let all = results.iter().all(|r| r.pass);
    text.push_str(&format!("overall: {}\n", if all { "pass" } else { "fail" }));
    vec![
        ("verify_report.csv".into(), t.to_csv()),
        ("verify_report.txt".into(), text),
    ]
}
