//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polybranch::estimators::{self, ChainEnsemble, MsidSource};
use polybranch::fitting::{self, FitForm, FitResult};
use polybranch::fpt::{self, FptConfig, FptDistribution};
use polybranch::netgraph::{self, PolymerNetwork, SourceFilter, SpQuery};
use polybranch::theory::{self, C1barVariant, RateFunction, TheoryError};
use polybranch::{Histogram, ModelConfig, ModelKind};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::{self, sig12, MeanRow, OutDir, RunManifest};
use crate::{
    BbmRate, Cli, CliError, CompareArgs, EstimateArgs, FitArgs, FormArg, ModelArgs, NetworkSpArgs,
    ReplayArgs, SigmaScale, SimulateArgs, TheoryArgs,
};

fn config_value<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn print_json(v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Model configuration with its jump scale resolved.
pub fn resolve_model(a: &ModelArgs) -> Result<ModelConfig, CliError> {
    let base = match a.model {
        ModelKind::Brw => ModelConfig::brw(a.kappa, a.nu),
        ModelKind::Gbrw => ModelConfig::gbrw(a.kappa, a.nu),
        ModelKind::Bcrw => {
            let beta = a
                .beta
                .ok_or_else(|| CliError::Config("--model bcrw requires --beta".into()))?;
            ModelConfig::bcrw(a.kappa, a.nu, beta)
        }
        ModelKind::Bbm => {
            let mut m = ModelConfig::bbm(a.kappa).with_time_step(a.dt);
            m.term_rate = a.nu;
            m
        }
    };
    if a.beta.is_some() && a.model != ModelKind::Bcrw {
        return Err(CliError::Config("--beta is only valid with --model bcrw".into()));
    }
    let scale = match (a.jump_scale, a.sigma_scale) {
        (Some(s), _) => s,
        (None, SigmaScale::None) => 1.0,
        (None, SigmaScale::Msid) => {
            if a.model == ModelKind::Bbm {
                return Err(CliError::Config("--sigma-scale msid applies to discrete models only".into()));
            }
            let chains = a.msid_chains.as_deref().map(ChainEnsemble::load).transpose()?;
            let source = match &chains {
                Some(c) => MsidSource::Measured(c),
                None => MsidSource::ClosedForm(a.alpha),
            };
            if a.model == ModelKind::Gbrw {
                estimators::scaled_gaussian_std(a.kappa, &source, 1.0)?
            } else {
                estimators::scaled_jump(a.kappa, &source, 1.0)?
            }
        }
    };
    let m = base.with_jump_scale(scale).with_dimension(a.d);
    m.validate()?;
    Ok(m)
}

fn dist_summary(q_x: f64, model: &ModelConfig, fpt_cfg: &FptConfig, d: &FptDistribution) -> Value {
    json!({
        "units": output::units(),
        "q_x": q_x,
        "mean": d.mean,
        "std": d.std,
        "n_hits": d.samples.len(),
        "n_replicas": d.n_replicas,
        "n_extinct": d.n_extinct,
        "n_timeout": d.n_timeout,
        "timeout_warning": d.timeout_warning(),
        "model": model,
        "fpt": fpt_cfg,
        "max_steps": fpt_cfg.resolved_max_steps(model),
    })
}

fn samples_csv(header: &str, samples: &[f64]) -> String {
    let mut out = format!("{header}\n");
    for s in samples {
        let _ = writeln!(out, "{}", sig12(*s));
    }
    out
}

fn write_distribution(
    dir: &mut OutDir,
    q_x: f64,
    summary: &Value,
    header: &str,
    samples: &[f64],
    hist: &Histogram,
) -> Result<(), CliError> {
    let tag = output::q_tag(q_x);
    dir.write_json(&format!("summary_q{tag}.json"), summary)?;
    dir.write(&format!("samples_q{tag}.csv"), &samples_csv(header, samples))?;
    dir.write(&format!("hist_q{tag}.csv"), &output::histogram_csv(hist))
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let mut dir = OutDir::create(&a.out)?;
    let mut rows = Vec::with_capacity(a.qx.len());
    for &q in &a.qx {
        let cfg = FptConfig {
            q_x: q,
            target_radius: a.rc,
            purge_cap: a.pc,
            max_steps: a.max_steps,
            n_replicas: a.replicas,
            seed: a.seed,
            bin_width: a.bins,
        };
        let d = fpt::run_ensemble(&model, &cfg)?;
        if d.timeout_warning() {
            eprintln!(
                "warning: q_x = {q}: {} of {} replicas timed out",
                d.n_timeout, d.n_replicas
            );
        }
        write_distribution(&mut dir, q, &dist_summary(q, &model, &cfg, &d), "fpt", &d.samples, &d.histogram)?;
        rows.push(MeanRow {
            q_x: q,
            mean: d.mean,
            std: d.std,
            n: d.samples.len(),
        });
    }
    dir.write("means.csv", &output::means_csv(&rows))?;
    let config = json!({ "args": config_value(a), "model": model });
    dir.finish(RunManifest::new("simulate", argv, Some(a.seed), config))
}

/// Rate function of the per-step jump of a discrete model.
pub fn jump_rate_function(model: &ModelConfig) -> Result<RateFunction, CliError> {
    match model.kind {
        ModelKind::Brw => {
            if model.dimension != 3 {
                return Err(CliError::Config("brw theory needs --d 3 (uniform-sphere jumps)".into()));
            }
            Ok(RateFunction::uniform_sphere(model.jump_scale)?)
        }
        ModelKind::Gbrw => Ok(RateFunction::gaussian(model.jump_scale)?),
        ModelKind::Bcrw => Err(CliError::Config("no closed-form theory for bcrw".into())),
        ModelKind::Bbm => Err(CliError::Config("bbm has no per-step rate function".into())),
    }
}

/// Asymptotic speed `c1` of a model; `None` without supercritical growth.
/// For bbm `model.branch_rate` is used as the rate of a standard BBM.
pub fn theory_speed(model: &ModelConfig) -> Result<Option<f64>, CliError> {
    if model.kind == ModelKind::Bbm {
        return Ok((model.branch_rate > 0.0).then(|| model.jump_scale * (2.0 * model.branch_rate).sqrt()));
    }
    let rate = jump_rate_function(model)?;
    match theory::predict_brw(&rate, model.branch_rate, model.term_rate, model.dimension, 1.0) {
        Ok(p) => Ok(Some(p.c1)),
        Err(TheoryError::NoPositiveSpeed { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn theory_report(a: &TheoryArgs) -> Result<Value, CliError> {
    let m = &a.model;
    let model = resolve_model(m)?;
    let d = m.d;
    let eight = theory::eight_chain(m.kappa).ok();
    let mut report = json!({
        "units": output::units(),
        "model": m.model,
        "kappa": m.kappa,
        "nu": m.nu,
        "d": d,
        "qhat": a.qhat,
        "jump_scale": model.jump_scale,
        "lambda_c": {
            "eight_chain_approx": eight.map(|e| e.lambda_c_approx),
            "eight_chain_exact": eight.and_then(|e| e.lambda_c_exact),
        },
    });
    let obj = report.as_object_mut().expect("object literal");
    let no_growth = "rho <= 1: no supercritical growth, the frontier has no positive speed";

    if m.model == ModelKind::Bbm {
        let s = model.jump_scale;
        let rate = match a.bbm_rate {
            BbmRate::Implied => theory::implied_bbm_rate(m.kappa, m.nu)?,
            BbmRate::Direct => {
                if m.nu != 0.0 {
                    return Err(CliError::Config(
                        "--bbm-rate direct describes a BBM without termination; use --nu 0".into(),
                    ));
                }
                m.kappa
            }
        };
        obj.insert("bbm_rate".into(), json!(a.bbm_rate));
        obj.insert("implied_kappa".into(), json!(rate));
        obj.insert("s".into(), json!(s));
        obj.insert("rho".into(), json!(rate.exp()));
        let ext = match a.bbm_rate {
            BbmRate::Implied => theory::extinction_probability(m.kappa, m.nu)?,
            BbmRate::Direct => 0.0,
        };
        obj.insert("extinction_probability".into(), json!(ext));
        obj.insert("c2".into(), Value::Null);
        if rate > 0.0 {
            let c1 = s * (2.0 * rate).sqrt();
            let curve: Vec<Value> = a
                .qx
                .iter()
                .map(|&q| json!({ "q_x": q, "mean_fpt": theory::bbm_fpt_mean(q, rate, s, d) }))
                .collect();
            obj.insert("c1".into(), json!(c1));
            obj.insert("c1bar".into(), json!(theory::c1bar_estimate(C1barVariant::Bbm { kappa: rate, s }, d, a.qhat)));
            obj.insert("curve".into(), json!(curve));
            obj["lambda_c"]["bbm"] = json!(theory::bbm_critical_stretch(rate)?);
        } else {
            obj.insert("c1".into(), Value::Null);
            obj.insert("notice".into(), json!(no_growth));
        }
        return Ok(report);
    }

    let rate = jump_rate_function(&model)?;
    let rho = theory::rho(m.kappa, m.nu)?;
    obj.insert("rho".into(), json!(rho));
    obj.insert("extinction_probability".into(), json!(theory::extinction_probability(m.kappa, m.nu)?));
    obj.insert("rate_function".into(), json!(rate.kind));
    match theory::predict_brw(&rate, m.kappa, m.nu, d, a.qhat) {
        Ok(p) => {
            let curve: Vec<Value> = a
                .qx
                .iter()
                .map(|&q| json!({ "q_x": q, "mean_fpt": p.mean_fpt(q) }))
                .collect();
            obj.insert("c1".into(), json!(p.c1));
            obj.insert("c2".into(), json!(p.c2));
            obj.insert("c1bar".into(), json!(p.c1bar));
            obj.insert("curve".into(), json!(curve));
        }
        Err(TheoryError::NoPositiveSpeed { .. }) => {
            obj.insert("c1".into(), Value::Null);
            obj.insert("c2".into(), Value::Null);
            obj.insert("notice".into(), json!(no_growth));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(report)
}

pub fn theory(a: &TheoryArgs, argv: &[String]) -> Result<(), CliError> {
    let report = theory_report(a)?;
    if let Some(notice) = report.get("notice").and_then(Value::as_str) {
        eprintln!("notice: {notice}");
    }
    print_json(&report)?;
    if let Some(out) = &a.out {
        let mut dir = OutDir::create(out)?;
        dir.write_json("theory.json", &report)?;
        dir.finish(RunManifest::new("theory", argv, None, config_value(a)))?;
    }
    Ok(())
}

/// Window lengths of the MSID table: every n up to 100, then about 20 per decade.
fn msid_windows(max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=max.min(100)).collect();
    let mut x = 100.0_f64;
    loop {
        x *= 10f64.powf(0.05);
        let n = x.round() as usize;
        if n > max {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

pub fn estimate_report(a: &EstimateArgs) -> Result<Value, CliError> {
    let mut report = json!({ "units": output::units() });
    let obj = report.as_object_mut().expect("object literal");
    let chains = a.chains.as_deref().map(ChainEnsemble::load).transpose()?;
    let distances = match (&a.distances, &chains) {
        (Some(p), _) => Some(estimators::load_distances(p)?),
        (None, Some(c)) if c.crosslinks.is_some() => Some(c.crosslink_distances()),
        _ => None,
    };
    if distances.is_none() && chains.is_none() && a.beta.is_none() && a.target_cinf.is_none() {
        return Err(CliError::Config(
            "nothing to estimate: give --distances, --chains, --beta or --target-cinf".into(),
        ));
    }

    let mut kappa = a.kappa;
    if let Some(dist) = &distances {
        let est = estimators::estimate_branch_rate(dist, (a.fit_range[0], a.fit_range[1]))?;
        kappa = kappa.or(Some(est.kappa));
        obj.insert("branch_rate".into(), json!(est));
    }

    if let Some(c) = &chains {
        let longest = c.longest();
        let max = a.msid_max.unwrap_or(1000).min(longest.saturating_sub(1));
        if max == 0 {
            return Err(CliError::Runtime("chains too short for an MSID table".into()));
        }
        let mut table = Vec::new();
        for n in msid_windows(max) {
            table.push(json!({ "n": n, "msid": estimators::msid(c, n)? }));
        }
        let cinf = table.last().and_then(|r| r["msid"].as_f64());
        obj.insert("msid".into(), json!(table));
        obj.insert("c_inf_estimate".into(), json!(cinf));
    }

    let mut alpha = a.alpha;
    if let Some(beta) = a.beta {
        let al = estimators::alpha_of_beta(beta, a.alpha_steps, a.seed)?;
        alpha = alpha.or(Some(al));
        obj.insert(
            "correlation".into(),
            json!({ "beta": beta, "alpha": al, "c_inf": estimators::characteristic_ratio(al) }),
        );
    }
    if let Some(target) = a.target_cinf {
        let beta = estimators::invert_beta(target, a.alpha_steps, a.seed)?;
        obj.insert("inverted".into(), json!({ "target_c_inf": target, "beta": beta }));
    }

    if let Some(k) = kappa {
        let source = match (&chains, alpha) {
            (Some(c), _) => Some(MsidSource::Measured(c)),
            (None, Some(al)) => Some(MsidSource::ClosedForm(al)),
            _ => None,
        };
        if let Some(src) = source {
            obj.insert(
                "scaled_jump".into(),
                json!({ "kappa": k, "sigma_s": estimators::scaled_jump(k, &src, 1.0)? }),
            );
        }
    }
    Ok(report)
}

pub fn estimate(a: &EstimateArgs, argv: &[String]) -> Result<(), CliError> {
    let report = estimate_report(a)?;
    print_json(&report)?;
    if let Some(out) = &a.out {
        let mut dir = OutDir::create(out)?;
        dir.write_json("estimate.json", &report)?;
        dir.finish(RunManifest::new("estimate", argv, Some(a.seed), config_value(a)))?;
    }
    Ok(())
}

pub fn network_sp(a: &NetworkSpArgs, argv: &[String]) -> Result<(), CliError> {
    let net = PolymerNetwork::load(&a.network)?;
    let l_x = net.bbox.lengths[0];
    let qs = if a.qx.is_empty() {
        vec![0.25 * l_x, 0.5 * l_x, 0.75 * l_x, l_x]
    } else {
        a.qx.clone()
    };
    let sources = if a.sources.is_empty() {
        SourceFilter::All
    } else {
        SourceFilter::Subset(a.sources.clone())
    };
    let mut dir = OutDir::create(&a.out)?;
    let mut rows = Vec::with_capacity(qs.len());
    for &q in &qs {
        let query = SpQuery {
            q_x: q,
            sources: sources.clone(),
            bin_width: a.bins,
        };
        let sp = netgraph::sp_distribution(&net, &query)?;
        let summary = json!({
            "units": output::units(),
            "q_x": q,
            "mean": sp.mean,
            "std": sp.std,
            "n_sources": sp.n_sources,
            "n_connected": sp.samples.len(),
            "n_disconnected": sp.n_disconnected,
            "n_periodic_image": sp.n_periodic_image,
            "box": net.bbox,
            "n_nodes": net.node_count(),
            "n_edges": net.edges().len(),
        });
        write_distribution(&mut dir, q, &summary, "sp", &sp.samples, &sp.histogram)?;
        rows.push(MeanRow {
            q_x: q,
            mean: sp.mean,
            std: sp.std,
            n: sp.samples.len(),
        });
    }
    dir.write("means.csv", &output::means_csv(&rows))?;
    dir.finish(RunManifest::new("network-sp", argv, None, config_value(a)))
}

#[derive(Debug, Deserialize)]
struct FitRow {
    q_x: f64,
    mean: f64,
    std: Option<f64>,
    n: Option<f64>,
}

fn read_fit_input(path: &Path) -> Result<Vec<FitRow>, CliError> {
    let bad = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(bad)?;
    let rows = rdr.deserialize().collect::<Result<Vec<FitRow>, _>>().map_err(bad)?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn fit_report(a: &FitArgs) -> Result<(FitResult, Value), CliError> {
    let rows = read_fit_input(&a.input)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.q_x, r.mean)).collect();
    let weights = if a.weighted {
        let w = rows
            .iter()
            .map(|r| match (r.std, r.n) {
                (Some(s), Some(n)) if s > 0.0 && n > 0.0 => Ok(n / (s * s)),
                _ => Err(CliError::Config("--weighted needs positive std and n columns".into())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(w)
    } else {
        None
    };
    let form = match a.form {
        FormArg::Linear => FitForm::Linear,
        FormArg::Loglinear => FitForm::Loglinear,
    };
    let result = fitting::fit(form, &points, weights.as_deref())?;
    let label = match form {
        FitForm::Linear => "c1bar",
        FitForm::Loglinear => "c1",
    };
    let mut v = json!({
        "form": result.form,
        "coefficients": result.coefficients,
        "r_squared": result.r_squared,
        "residual_norm": result.residual_norm,
        "n_points": points.len(),
        "weighted": a.weighted,
    });
    v[label] = json!(result.speed());
    Ok((result, v))
}

pub fn fit(a: &FitArgs, argv: &[String]) -> Result<(), CliError> {
    let (_, report) = fit_report(a)?;
    print_json(&report)?;
    if let Some(out) = &a.out {
        let mut dir = OutDir::create(out)?;
        dir.write_json("fit.json", &report)?;
        dir.finish(RunManifest::new("fit", argv, None, config_value(a)))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparePoint {
    pub q_x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub kappa: f64,
    pub c1_sim: f64,
    pub c1_theory: f64,
    pub rel_error: f64,
    pub fit: FitResult,
    pub points: Vec<ComparePoint>,
}

fn compare_model(a: &CompareArgs, kappa: f64) -> Result<ModelConfig, CliError> {
    let m = match a.model {
        ModelKind::Brw => ModelConfig::brw(kappa, a.nu),
        ModelKind::Gbrw => ModelConfig::gbrw(kappa, a.nu),
        ModelKind::Bbm => {
            if a.nu != 0.0 {
                return Err(CliError::Config("compare for bbm uses a standard BBM; use --nu 0".into()));
            }
            ModelConfig::bbm(kappa).with_time_step(a.dt)
        }
        ModelKind::Bcrw => return Err(CliError::Config("no closed-form theory for bcrw".into())),
    }
    .with_jump_scale(a.jump_scale);
    m.validate()?;
    Ok(m)
}

/// Simulated and predicted speed for one branching rate.
pub fn compare_one(a: &CompareArgs, kappa: f64) -> Result<CompareRow, CliError> {
    let model = compare_model(a, kappa)?;
    let c1_theory = theory_speed(&model)?
        .ok_or_else(|| CliError::Config(format!("kappa = {kappa}: no supercritical growth")))?;
    let mut points = Vec::with_capacity(a.qx_points);
    for q in fitting::linspace(a.qx_range[0], a.qx_range[1], a.qx_points) {
        let mut cfg = FptConfig::new(q, a.replicas, a.seed);
        cfg.purge_cap = a.pc;
        let d = fpt::run_ensemble(&model, &cfg)?;
        points.push(ComparePoint {
            q_x: q,
            mean: d.mean,
            std: d.std,
            n: d.samples.len(),
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.q_x, p.mean)).collect();
    let fit = fitting::log_linear_fit(&xy)?;
    let c1_sim = fit.speed();
    Ok(CompareRow {
        kappa,
        c1_sim,
        c1_theory,
        rel_error: (c1_sim - c1_theory) / c1_theory,
        fit,
        points,
    })
}

pub fn compare_rows(a: &CompareArgs) -> Result<Vec<CompareRow>, CliError> {
    if a.qx_points < 3 {
        return Err(CliError::Config("--qx-points must be at least 3 for a log-linear fit".into()));
    }
    if !(a.qx_range[0] > 1.0 && a.qx_range[1] > a.qx_range[0]) {
        return Err(CliError::Config("--qx-range needs 1 < start < stop".into()));
    }
    a.kappa_grid.0.iter().map(|&k| compare_one(a, k)).collect()
}

pub fn compare(a: &CompareArgs, argv: &[String]) -> Result<(), CliError> {
    // validate every grid point before spending time on simulation
    for &k in &a.kappa_grid.0 {
        let m = compare_model(a, k)?;
        theory_speed(&m)?;
    }
    let mut dir = OutDir::create(&a.out)?;
    let rows = compare_rows(a)?;
    let mut main = String::from("kappa,c1_sim,c1_theory,rel_error\n");
    let mut pts = String::from("kappa,q_x,mean,std,n\n");
    for r in &rows {
        let _ = writeln!(
            main,
            "{},{},{},{}",
            sig12(r.kappa),
            sig12(r.c1_sim),
            sig12(r.c1_theory),
            sig12(r.rel_error)
        );
        for p in &r.points {
            let _ = writeln!(pts, "{},{},{},{},{}", sig12(r.kappa), sig12(p.q_x), sig12(p.mean), sig12(p.std), p.n);
        }
    }
    dir.write("compare.csv", &main)?;
    dir.write("compare_points.csv", &pts)?;
    dir.finish(RunManifest::new("compare", argv, Some(a.seed), config_value(a)))
}

/// Recorded arguments with the `--out` value replaced.
fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.to_string_lossy().into_owned();
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut it = argv.iter();
    let mut found = false;
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            result.push("--out".to_string());
            result.push(out.clone());
            found = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            found = true;
        } else {
            result.push(a.clone());
        }
    }
    if !found {
        result.push("--out".to_string());
        result.push(out);
    }
    result
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.manifest)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", a.manifest.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", a.manifest.display())))?;
    let argv = match &a.out {
        Some(out) => replace_out(&manifest.argv, out),
        None => manifest.argv.clone(),
    };
    let mut full = vec![PathBuf::from(&manifest.tool).to_string_lossy().into_owned()];
    full.extend(argv.iter().cloned());
    use clap::Parser;
    let cli = Cli::try_parse_from(&full)
        .map_err(|e| CliError::Config(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, crate::Command::Replay(_)) {
        return Err(CliError::Config("a manifest cannot record a replay".into()));
    }
    crate::dispatch(cli.command, &argv)
}
