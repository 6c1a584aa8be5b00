//! The pipeline behind each subcommand. Every `render_*` function returns
//! the files it would write as `(name, contents)` pairs so that runs can be
//! compared byte for byte; `cmd_*` writes them with a manifest.

use std::path::Path;

use crate::asymptotics::{estimate_lambda, joint_law, population, LambdaEstimate, PopulationModel};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::estimators::{build_kx, named_res_with, Estimator, KxSource};
use crate::io::{fmt_num, matrix_to_csv, read_matrix, OutputDir, RunManifest, Table};
use crate::matcore::{frobenius, vec_t, Mat};
use crate::model::{make_restricted_b, Model};
use crate::montecarlo::{compare_law, risk_diagnostic, run, with_workers, EmpiricalSummary};
use crate::risk::{AdrReport, RiskProblem};
use crate::seeding::stream_seed;
use crate::verify;

pub type Rendered = Vec<(String, String)>;

pub const EFFICIENCY_HEADER: [&str; 6] = [
    "scale",
    "theta0_norm2",
    "adr_ue",
    "adr_re",
    "relative_efficiency",
    "verdict",
];

fn write_all(out: &Path, command: &str, cfg: &Config, files: &Rendered) -> Result<RunManifest> {
    let mut dir = OutputDir::create(out)?;
    for (name, text) in files {
        dir.text(name, text)?;
    }
    dir.finish(command, &cfg.digest(), cfg.master_seed)
}

/// Estimates every configured estimator from observed `Z` and `X`.
pub fn render_estimate(cfg: &Config, z: &Mat, x: &Mat) -> Result<Rendered> {
    if x.ncols() != cfg.p || z.ncols() != cfg.q {
        return Err(Error::Config(format!(
            "X has {} columns and Z has {}, but the config has p = {} and q = {}",
            x.ncols(),
            z.ncols(),
            cfg.p,
            cfg.q
        )));
    }
    if x.nrows() != z.nrows() {
        return Err(Error::Config(format!(
            "X has {} rows but Z has {}",
            x.nrows(),
            z.nrows()
        )));
    }
    let restr = cfg.restriction()?;
    let q0 = cfg.generic_q0()?;
    let kxp = build_kx(x, cfg.sigma_delta2, x.nrows())?;
    let est = named_res_with(x, z, &kxp, &restr, q0.as_ref())?;
    Ok(est
        .named()
        .into_iter()
        .map(|(label, m)| (format!("{label}.csv"), matrix_to_csv(m)))
        .collect())
}

pub fn cmd_estimate(cfg: &Config, z_csv: &Path, x_csv: &Path, out: &Path) -> Result<RunManifest> {
    let z = read_matrix(z_csv)?;
    let x = read_matrix(x_csv)?;
    let files = render_estimate(cfg, &z, &x)?;
    write_all(out, "estimate", cfg, &files)
}

/// Everything the law-based commands share: population model, truth and `Λ̂`.
#[derive(Debug, Clone)]
pub struct LawInputs {
    pub model: Model,
    pub pm: PopulationModel,
    pub truth: Mat,
    pub lambda: LambdaEstimate,
}

/// Estimates `Λ` at `simulation.lambda_n` for the configured truth.
pub fn law_inputs(cfg: &Config, workers: Option<usize>) -> Result<LawInputs> {
    let mc = cfg.model_config()?;
    let model = Model::new(mc.clone())?;
    let pm = population(&model)?;
    let truth = make_restricted_b(&mc, &cfg.restriction()?, &cfg.b_seed()?)?;
    let lambda_model = Model::new(mc.with_n(cfg.simulation.lambda_n))?;
    let seed = stream_seed(cfg.master_seed, "lambda");
    let lambda = with_workers(workers, || {
        estimate_lambda(
            &lambda_model,
            &truth,
            cfg.simulation.lambda_reps,
            seed,
            KxSource::PlugIn,
        )
    })??;
    Ok(LawInputs {
        model,
        pm,
        truth,
        lambda,
    })
}

fn centred_set(set: &[Estimator]) -> Vec<Estimator> {
    set.iter().filter(|e| **e != Estimator::Lse).cloned().collect()
}

pub fn render_law(cfg: &Config, inputs: &LawInputs) -> Result<Rendered> {
    let restr = cfg.restriction()?;
    let set = centred_set(&cfg.sim_estimators()?);
    let law = joint_law(&inputs.pm, &inputs.lambda.lambda, &restr, &set, &restr.theta0)?;
    let mut files = vec![
        ("lambda.csv".to_string(), matrix_to_csv(&inputs.lambda.lambda)),
        ("law_cov.csv".to_string(), matrix_to_csv(&law.full_cov())),
    ];
    for (label, mu) in law.labels.iter().zip(&law.means) {
        files.push((format!("law_mean_{label}.csv"), matrix_to_csv(mu)));
    }
    let mut t = Table::new(&["quantity", "value"]);
    t.push(vec!["lambda_reps".into(), inputs.lambda.reps.to_string()]);
    t.push(vec!["lambda_n".into(), inputs.lambda.n_used.to_string()]);
    t.push(vec![
        "lambda_max_standard_error".into(),
        fmt_num(inputs.lambda.standard_error),
    ]);
    t.push(vec![
        "lambda_mean_norm".into(),
        fmt_num(inputs.lambda.mean.norm()),
    ]);
    files.push(("lambda_summary.csv".into(), t.to_csv()));
    Ok(files)
}

pub fn cmd_law(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<RunManifest> {
    let inputs = law_inputs(cfg, workers)?;
    write_all(out, "law", cfg, &render_law(cfg, &inputs)?)
}

pub fn risk_problem(cfg: &Config, inputs: &LawInputs) -> Result<RiskProblem> {
    RiskProblem::new(
        inputs.pm.clone(),
        inputs.lambda.lambda.clone(),
        cfg.restriction()?,
        cfg.weight()?,
    )
}

pub const ADR_HEADER: [&str; 14] = [
    "estimator",
    "adr_ue",
    "adr_re",
    "f1",
    "f1_compact",
    "quadratic",
    "ch_min_F1",
    "ch_max_F1",
    "lower_threshold",
    "upper_threshold",
    "theta0_norm2",
    "verdict",
    "relative_efficiency",
    "re_not_worse",
];

fn adr_row(label: &str, r: &AdrReport) -> Vec<String> {
    vec![
        label.to_string(),
        fmt_num(r.adr_ue),
        fmt_num(r.adr_re),
        fmt_num(r.f1),
        fmt_num(r.f1_compact),
        fmt_num(r.quadratic),
        fmt_num(r.ch_min_f1),
        fmt_num(r.ch_max_f1),
        fmt_num(r.lower_threshold),
        fmt_num(r.upper_threshold),
        fmt_num(r.theta0_norm2),
        r.verdict.to_string(),
        fmt_num(r.relative_efficiency),
        r.re_not_worse.to_string(),
    ]
}

pub fn render_adr(cfg: &Config, inputs: &LawInputs) -> Result<Rendered> {
    let prob = risk_problem(cfg, inputs)?;
    let theta0 = prob.restr.theta0.clone();
    let mut table = Table::new(&ADR_HEADER);
    let mut files = Vec::new();
    for which in cfg.restricted_estimators()? {
        let q0 = inputs.pm.q0_for(&which)?;
        let r = prob.report(&q0, &theta0)?;
        table.push(adr_row(which.label(), &r));
        files.push((format!("F1_{}.csv", which.label()), matrix_to_csv(&r.f1_matrix)));
    }
    files.insert(0, ("adr.csv".into(), table.to_csv()));
    Ok(files)
}

pub fn cmd_adr(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<RunManifest> {
    let inputs = law_inputs(cfg, workers)?;
    write_all(out, "adr", cfg, &render_adr(cfg, &inputs)?)
}

/// Grid of scales for the efficiency sweep.
pub fn efficiency_scales(cfg: &Config, prob: &RiskProblem, q0: &Mat, direction: &Mat) -> Result<Vec<f64>> {
    if let Some(s) = &cfg.efficiency.scales {
        if s.is_empty() || s.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(
                "efficiency.scales must be nonempty, finite and nonnegative".into(),
            ));
        }
        return Ok(s.clone());
    }
    let max = match cfg.efficiency.max_scale {
        Some(m) if m > 0.0 && m.is_finite() => m,
        Some(m) => return Err(Error::Config(format!("efficiency.max_scale must be positive, got {m}"))),
        None => {
            // twice the scale at which the two risks are equal
            let d = direction / frobenius(direction);
            let t = vec_t(&d);
            let curvature = (t.transpose() * prob.f1_matrix(q0)? * &t)[(0, 0)];
            let f1 = prob.f1(q0)?;
            if f1 > 0.0 && curvature > 0.0 {
                2.0 * (f1 / curvature).sqrt()
            } else {
                1.0
            }
        }
    };
    let k = cfg.efficiency.points;
    Ok((0..k).map(|i| max * i as f64 / (k - 1) as f64).collect())
}

pub fn render_efficiency(cfg: &Config, inputs: &LawInputs) -> Result<Rendered> {
    let prob = risk_problem(cfg, inputs)?;
    let which = cfg.efficiency_estimator()?;
    let q0 = inputs.pm.q0_for(&which)?;
    let direction = cfg.efficiency_direction()?;
    let scales = efficiency_scales(cfg, &prob, &q0, &direction)?;
    let rows = prob.efficiency_curve(&q0, &direction, &scales)?;
    let mut t = Table::new(&EFFICIENCY_HEADER);
    for r in &rows {
        t.push(vec![
            fmt_num(r.scale),
            fmt_num(r.theta0_norm2),
            fmt_num(r.adr_ue),
            fmt_num(r.adr_re),
            fmt_num(r.relative_efficiency),
            r.verdict.to_string(),
        ]);
    }
    Ok(vec![("efficiency.csv".into(), t.to_csv())])
}

pub fn cmd_efficiency(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<RunManifest> {
    let inputs = law_inputs(cfg, workers)?;
    let pool_result = with_workers(workers, || render_efficiency(cfg, &inputs))??;
    write_all(out, "efficiency", cfg, &pool_result)
}

/// Simulation summary plus its comparison with the limit law.
pub fn render_simulate(cfg: &Config, workers: Option<usize>) -> Result<Rendered> {
    let plan = cfg.plan()?;
    let summary = run(&plan, workers)?;
    let inputs = law_inputs(cfg, workers)?;
    let mut files = vec![("sim_cov.csv".to_string(), matrix_to_csv(&summary.cov_empirical))];
    for (label, m) in summary.labels.iter().zip(&summary.mean_errors) {
        files.push((format!("sim_mean_{label}.csv"), matrix_to_csv(m)));
    }
    let mut losses = Table::new(&summary.labels.iter().map(String::as_str).collect::<Vec<_>>());
    let kept = summary.per_rep_losses.first().map_or(0, Vec::len);
    for r in 0..kept {
        losses.push(summary.per_rep_losses.iter().map(|l| fmt_num(l[r])).collect());
    }
    files.push(("sim_losses.csv".into(), losses.to_csv()));

    let idx: Vec<usize> = (0..summary.labels.len())
        .filter(|&i| summary.labels[i] != Estimator::Lse.label())
        .collect();
    let mut verdict = vec![
        format!("reps = {}", summary.rep_count),
        format!("excluded = {}", summary.excluded),
        format!("max_constraint_violation = {}", fmt_num(summary.max_constraint_violation)),
    ];
    if !idx.is_empty() {
        let sub: EmpiricalSummary = summary.select(&idx)?;
        let law = joint_law(
            &inputs.pm,
            &inputs.lambda.lambda,
            &plan.restr,
            &centred_set(&plan.estimators),
            &plan.restr.theta0,
        )?;
        let cmp = compare_law(&sub, &law, verify::LAW_COV_TOL, verify::LAW_MEAN_Z)?;
        let mut blocks = Table::new(&["estimator_i", "estimator_j", "rel_frobenius"]);
        for (i, li) in cmp.labels.iter().enumerate() {
            for (j, lj) in cmp.labels.iter().enumerate() {
                blocks.push(vec![li.clone(), lj.clone(), fmt_num(cmp.block_errors[i][j])]);
            }
        }
        files.push(("law_comparison.csv".into(), blocks.to_csv()));
        let mut means = Table::new(&["estimator", "max_abs_z"]);
        for (l, z) in cmp.labels.iter().zip(&cmp.mean_z) {
            means.push(vec![l.clone(), fmt_num(*z)]);
        }
        files.push(("mean_comparison.csv".into(), means.to_csv()));
        let mut risk = Table::new(&["estimator", "empirical", "empirical_se", "adr", "rel_gap", "within_tolerance"]);
        for c in risk_diagnostic(&sub, &law, &plan.weight)? {
            risk.push(vec![
                c.label,
                fmt_num(c.empirical),
                fmt_num(c.empirical_se),
                fmt_num(c.adr),
                fmt_num(c.rel_gap),
                c.pass.to_string(),
            ]);
        }
        files.push(("risk_diagnostic.csv".into(), risk.to_csv()));
        verdict.push(format!("max_cov_block_error = {}", fmt_num(cmp.max_block_error)));
        verdict.push(format!("max_mean_z = {}", fmt_num(cmp.max_mean_z)));
        verdict.push(format!("covariance = {}", pass_word(cmp.cov_pass)));
        verdict.push(format!("means = {}", pass_word(cmp.mean_pass)));
        verdict.push(format!("verdict = {}", pass_word(cmp.pass())));
    }
    let mut text = verdict.join("\n");
    text.push('\n');
    files.push(("verdict.txt".into(), text));
    Ok(files)
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

pub fn cmd_simulate(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<RunManifest> {
    let files = render_simulate(cfg, workers)?;
    write_all(out, "simulate", cfg, &files)
}

/// Runs the acceptance suite; the manifest is written even when criteria fail.
pub fn cmd_verify(
    cfg: &Config,
    out: &Path,
    workers: Option<usize>,
) -> Result<(RunManifest, Vec<verify::CriterionResult>)> {
    let results = verify::run_all(cfg, workers);
    let files = verify::render(&results);
    let manifest = write_all(out, "verify", cfg, &files)?;
    Ok((manifest, results))
}
