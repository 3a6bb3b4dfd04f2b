use std::path::Path;

use anyhow::{Context, Result};
use hydrofit::applications::{chow_test, decompose_eom, estimate_force, stiffness_damping, StiffnessDampingReport};
use hydrofit::dataset::{self, CsvSchema};
use hydrofit::selection::{grid_search_with, Weights};
use hydrofit::simulator::{self, ActuatorTruth, PressureLaw, Protocol};
use hydrofit::stats;
use hydrofit::{evaluate, fit, Dataset, FitConfig, FitError, FittedModel, ModelSpec, Trajectory};
use serde::Serialize;

use crate::flags::{
    usage, ChowArgs, Cli, Command, DiagnoseArgs, FitArgs, ForceArgs, InputArgs, PcaArgs, SelectArgs, SimulateArgs,
    UsageError,
};
use crate::output::{OutDir, RunManifest};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Select(a) => select(&a),
        Command::Pca(a) => pca(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Chow(a) => chow(&a),
        Command::Force(a) => force(&a),
    }
}

fn load(path: &Path, input: &InputArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    let schema = CsvSchema::detect(path).with_context(|| format!("reading header of {}", path.display()))?;
    let ds = dataset::load_csv_with(path, &schema, input.vdot_source.into())
        .with_context(|| format!("loading {}", path.display()))?;
    manifest.input(path, ds.fingerprint());
    log::info!(
        "{}: {} trajectories, {} samples",
        path.display(),
        ds.trajectories().len(),
        ds.n_samples()
    );
    Ok(ds)
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model = FittedModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))?;
    manifest.input(path, model.trained_on().to_string());
    Ok(model)
}

fn check_config(cfg: &FitConfig) -> Result<()> {
    cfg.validate().map_err(|e| UsageError(e.to_string()).into())
}

fn holdout_split(ds: &Dataset, holdout: Option<f64>, seed: u64) -> Result<(Dataset, Dataset)> {
    match holdout {
        None => Ok((ds.clone(), ds.clone())),
        Some(h) if h > 0.0 && h < 1.0 => Ok(dataset::split(ds, 1.0 - h, seed)?),
        Some(h) => usage(format!("--holdout must lie in (0, 1), got {h}")),
    }
}

/// Truth as written next to simulated data.
#[derive(Debug, Serialize)]
struct TruthFile<'a> {
    #[serde(flatten)]
    truth: &'a ActuatorTruth,
    load_offset: f64,
    protocol: &'a Protocol,
    fingerprint: String,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("simulate", a)?;
    let law = match &a.truth {
        None => PressureLaw::reference(),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let law = value.get("law").cloned().unwrap_or(value);
            manifest.input(path, "law");
            serde_json::from_value(law).with_context(|| format!("parsing pressure law in {}", path.display()))?
        }
    };
    let truth = ActuatorTruth {
        law,
        hysteresis_gain: a.hysteresis,
        air_volume: a.air,
        noise_sigma: a.noise,
        ..ActuatorTruth::default()
    };
    let proto = Protocol {
        v_max: a.v_max,
        flow_rates: a.rates.clone(),
        cycles_per_rate: a.cycles,
        sample_rate_hz: a.sample_rate,
        seed: a.seed,
    };
    if let Err(e) = truth.validate().and_then(|_| proto.validate()) {
        return usage(e.to_string());
    }
    if !a.load_offset.is_finite() {
        return usage("--load-offset must be finite");
    }
    let mut ds = simulator::generate(&truth, &proto)?;
    if a.load_offset != 0.0 {
        ds = simulator::inject_external_load(&ds, &vec![a.load_offset; ds.n_samples()])?;
    }

    let mut out = OutDir::create(&a.out)?;
    out.write_with("data.csv", |w| Ok(dataset::write_csv(&ds, w)?))?;
    out.write_json(
        "truth.json",
        &TruthFile {
            truth: &truth,
            load_offset: a.load_offset,
            protocol: &proto,
            fingerprint: ds.fingerprint(),
        },
    )?;
    out.finish(&manifest)?;
    println!(
        "{} trajectories, {} samples -> {}",
        ds.trajectories().len(),
        ds.n_samples(),
        a.out.join("data.csv").display()
    );
    println!("fingerprint {}", ds.fingerprint());
    Ok(())
}

/// Fits, keeping the best restart when LM ran out of iterations.
fn fit_or_best(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<(FittedModel, Option<String>)> {
    match fit(ds, spec, cfg) {
        Ok(m) => Ok((m, None)),
        Err(FitError::NoConvergence { best, cost }) => {
            let msg = format!("LM did not converge; kept best restart (cost {cost:.6e})");
            log::warn!("{msg}");
            Ok((*best, Some(msg)))
        }
        Err(e) => Err(e).with_context(|| format!("fitting {spec}")),
    }
}

fn coefficient_table(model: &FittedModel) -> String {
    use std::fmt::Write as _;
    let spec = model.spec();
    let params = model.params();
    let mut s = String::new();
    if !spec.family.is_poly() {
        let _ = writeln!(s, "{} parameters (see model.json)", params.len());
        return s;
    }
    let terms = spec.poly_terms();
    let _ = writeln!(s, "{:<14} {:>24}", "term", "coefficient");
    for ((i, j), c) in terms.iter().zip(params) {
        let _ = writeln!(s, "{:<14} {:>24.12e}", format!("v^{i} vdot^{j}"), c);
    }
    for (l, c) in params[terms.len()..].chunks(2).enumerate() {
        let _ = writeln!(s, "{:<14} {:>24.12e}", format!("v[t-{}]", l + 1), c[0]);
        if let Some(c1) = c.get(1) {
            let _ = writeln!(s, "{:<14} {:>24.12e}", format!("vdot[t-{}]", l + 1), c1);
        }
    }
    s
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let mut manifest = RunManifest::new("fit", a)?;
    let spec = a.spec.build()?;
    let cfg = a.train.config();
    check_config(&cfg)?;
    let ds = load(&a.data, &a.input, &mut manifest)?;
    let (train, score) = holdout_split(&ds, a.holdout, cfg.seed)?;

    let (model, note) = fit_or_best(&train, &spec, &cfg)?;
    let mut report = evaluate(&model, &score)?;
    report.warnings.extend(note);

    let mut out = OutDir::create(&a.out)?;
    let mut model_json = model.to_json()?;
    model_json.push('\n');
    out.write_text("model.json", &model_json)?;
    out.write_json("report.json", &report)?;
    let table = format!("{}\n{}", report.table(), coefficient_table(&model));
    out.write_text("report.txt", &table)?;
    out.finish(&manifest)?;
    print!("{table}");
    Ok(())
}

fn select(a: &SelectArgs) -> Result<()> {
    let mut manifest = RunManifest::new("select", a)?;
    let weights = Weights::new(a.w1, a.w2, a.w3).map_err(|e| UsageError(e.to_string()))?;
    let cfg = a.train.config();
    check_config(&cfg)?;
    let ranges = a.ranges();
    if let Err(e) = ranges.specs(a.family) {
        return usage(e.to_string());
    }
    let ds = load(&a.data, &a.input, &mut manifest)?;
    let (train, score) = holdout_split(&ds, a.holdout, cfg.seed)?;

    let grid = grid_search_with(&train, &score, a.family, &ranges, &weights, &cfg)?;
    let mut out = OutDir::create(&a.out)?;
    out.write_json("grid.json", &grid)?;
    let table = grid.table();
    out.write_text("grid.txt", &table)?;
    out.finish(&manifest)?;
    print!("{table}");
    if grid.best.is_none() {
        anyhow::bail!("no grid entry could be fitted");
    }
    Ok(())
}

fn pca(a: &PcaArgs) -> Result<()> {
    #[derive(Serialize)]
    struct PcaFile {
        correlations: stats::Correlations,
        pca: stats::PcaResult,
    }
    let mut manifest = RunManifest::new("pca", a)?;
    let ds = load(&a.data, &a.input, &mut manifest)?;
    let x = stats::build_data_matrix(&ds);
    let correlations = stats::correlations(&x)?;
    let pca = stats::pca(&x)?;
    let scores = pca.scores(&x);

    let mut out = OutDir::create(&a.out)?;
    out.write_with("scores.csv", |w| {
        writeln!(w, "pc1,pc2,pc3,pc4")?;
        for i in 0..scores.nrows() {
            writeln!(
                w,
                "{},{},{},{}",
                scores[(i, 0)],
                scores[(i, 1)],
                scores[(i, 2)],
                scores[(i, 3)]
            )?;
        }
        Ok(())
    })?;
    let table = pca.table();
    out.write_text("pca.txt", &table)?;
    out.write_json("pca.json", &PcaFile { correlations, pca })?;
    out.finish(&manifest)?;
    print!("{table}");
    Ok(())
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        spec: &'a ModelSpec,
        n: usize,
        k_bar: f64,
        c_bar: f64,
        k_bar_inflation: Option<f64>,
        k_bar_deflation: Option<f64>,
        c_bar_inflation: Option<f64>,
        c_bar_deflation: Option<f64>,
        eom: Option<hydrofit::applications::EomDecomposition>,
    }
    let mut manifest = RunManifest::new("diagnose", a)?;
    let model = load_model(&a.model, &mut manifest)?;
    if !model.spec().family.is_poly() {
        return usage(format!("diagnose needs a polynomial model, got {}", model.spec()));
    }
    let ds = dataset::segment_dataset(&load(&a.data, &a.input, &mut manifest)?);
    let report: StiffnessDampingReport = stiffness_damping(&model, &ds)?;
    let summary = Summary {
        spec: model.spec(),
        n: report.pointwise.len(),
        k_bar: report.k_bar,
        c_bar: report.c_bar,
        k_bar_inflation: report.k_bar_inflation,
        k_bar_deflation: report.k_bar_deflation,
        c_bar_inflation: report.c_bar_inflation,
        c_bar_deflation: report.c_bar_deflation,
        eom: decompose_eom(&model).ok(),
    };

    let mut out = OutDir::create(&a.out)?;
    out.write_with("pointwise.csv", |w| {
        writeln!(w, "v,vdot,k,c")?;
        for p in &report.pointwise {
            writeln!(w, "{},{},{},{}", p.v, p.v_dot, p.k, p.c)?;
        }
        Ok(())
    })?;
    out.write_json("diagnose.json", &summary)?;
    out.finish(&manifest)?;

    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    println!("{:<12} {:>14} {:>14} {:>14}", "", "all", "inflation", "deflation");
    println!(
        "{:<12} {:>14.6} {:>14} {:>14}",
        "k [kPa/mm3]",
        report.k_bar,
        opt(report.k_bar_inflation),
        opt(report.k_bar_deflation)
    );
    println!(
        "{:<12} {:>14.6} {:>14} {:>14}",
        "c [kPa s/mm3]",
        report.c_bar,
        opt(report.c_bar_inflation),
        opt(report.c_bar_deflation)
    );
    Ok(())
}

fn chow(a: &ChowArgs) -> Result<()> {
    let mut manifest = RunManifest::new("chow", a)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return usage(format!("--alpha must lie in (0, 1), got {}", a.alpha));
    }
    let spec = if a.p == 0 {
        ModelSpec::poly(a.n, a.m)
    } else {
        ModelSpec::poly_ar(a.p, a.n, a.m)
    }
    .map_err(|e| UsageError(e.to_string()))?;
    let first = load(&a.first, &a.input, &mut manifest)?;
    let second = load(&a.second, &a.input, &mut manifest)?;
    let report = chow_test(&first, &second, &spec, a.alpha)?;

    let mut out = OutDir::create(&a.out)?;
    out.write_json("chow.json", &report)?;
    out.finish(&manifest)?;
    println!(
        "{spec}: F = {:.4} on ({}, {}) df",
        report.f_stat, report.df1, report.df2
    );
    println!(
        "critical value at alpha {} = {:.4}, p = {:.4e}",
        report.alpha, report.critical_value, report.p_value
    );
    println!(
        "{}",
        if report.reject {
            "reject: the datasets differ"
        } else {
            "no structural break detected"
        }
    );
    Ok(())
}

fn three<T: Clone>(v: &[T], flag: &str) -> Result<[T; 3]> {
    match v {
        [a, b, c] => Ok([a.clone(), b.clone(), c.clone()]),
        _ => usage(format!("--{flag} takes exactly three values, got {}", v.len())),
    }
}

fn force(a: &ForceArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        n: usize,
        areas: [f64; 3],
        mean_force: f64,
        sd_force: f64,
        mean_magnitude: f64,
    }
    let mut manifest = RunManifest::new("force", a)?;
    let model_paths = three(&a.models, "models")?;
    let stream_paths = three(&a.streams, "streams")?;
    let areas = three(&a.areas, "areas")?;
    if areas.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return usage("--areas must be positive");
    }
    let models = [
        load_model(&model_paths[0], &mut manifest)?,
        load_model(&model_paths[1], &mut manifest)?,
        load_model(&model_paths[2], &mut manifest)?,
    ];
    let mut streams: Vec<Trajectory> = Vec::with_capacity(3);
    for p in &stream_paths {
        let ds = load(p, &a.input, &mut manifest)?;
        let s = simulator::continuous_stream(&ds, f64::INFINITY)
            .with_context(|| format!("{} is not one regularly sampled stream", p.display()))?;
        streams.push(s);
    }
    let streams: [Trajectory; 3] = streams.try_into().expect("three streams");
    let est = estimate_force(&models, &streams, areas)?;
    if est.is_empty() {
        anyhow::bail!("streams are shorter than the model lag history");
    }

    let n = est.len() as f64;
    let mean_force = est.iter().map(|e| e.force).sum::<f64>() / n;
    let var = est.iter().map(|e| (e.force - mean_force).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let summary = Summary {
        n: est.len(),
        areas,
        mean_force,
        sd_force: var.sqrt(),
        mean_magnitude: est.iter().map(|e| e.magnitude).sum::<f64>() / n,
    };

    let mut out = OutDir::create(&a.out)?;
    out.write_with("force.csv", |w| {
        writeln!(w, "t,force,magnitude,r1,r2,r3")?;
        for e in &est {
            let [r1, r2, r3] = e.per_chamber_residual;
            writeln!(w, "{},{},{},{},{},{}", e.t, e.force, e.magnitude, r1, r2, r3)?;
        }
        Ok(())
    })?;
    out.write_json("force.json", &summary)?;
    out.finish(&manifest)?;
    println!(
        "{} samples: mean force {:.4} mN (sd {:.4}), mean |force| {:.4} mN",
        summary.n, summary.mean_force, summary.sd_force, summary.mean_magnitude
    );
    Ok(())
}
