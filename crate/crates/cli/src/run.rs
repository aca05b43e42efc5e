use std::io::Write;

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use landau_dpp::acceptance;
use landau_dpp::dpp::{self, BoxGrid, FlatEnsemble, PointSample};
use landau_dpp::kernel::{exact_variance_quadrature, predicted_expectation, predicted_variance, FlatKernel};
use landau_dpp::stats::{clt_check, discrete_moments, linear_statistic, lln_check, StatRun};
use landau_dpp::torus::{
    cluster_spectrum, count_states, decay_fit, eigensolve, projection_kernel, sample_torus_ensemble,
    torus_demailly_prediction, write_decay_csv, write_spectrum_csv, MagneticLattice, TorusConfig,
};

use crate::config::{ExperimentConfig, Mode};
use crate::output::Artifacts;

/// Dispatches on the mode. `Ok(false)` means the run finished but an
/// internal validation failed.
pub fn run(cfg: &ExperimentConfig, seed: u64, out: &mut Artifacts) -> Result<bool> {
    match cfg.mode {
        Mode::Predict => predict(cfg, out),
        Mode::SampleFlat => sample_flat(cfg, seed, out),
        Mode::TorusSpectrum => torus_spectrum(cfg, out),
        Mode::TorusEnsemble => torus_ensemble(cfg, seed, out),
        Mode::Verify => verify(seed, out),
    }
}

fn predict(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<bool> {
    let (model, levels) = cfg.levels()?;
    let flat = cfg.flat()?;
    let f = cfg.test_function(2 * model.n())?;
    let records = flat
        .p
        .par_iter()
        .map(|&p| -> Result<Value> {
            let expectation = predicted_expectation(&model, &levels, &f, p)?;
            let prediction = predicted_variance(&model, &levels, &f, p)?;
            let mut rec = json!({
                "p": p,
                "predicted_expectation": expectation,
                "predicted_variance": prediction,
                "prediction": prediction,
            });
            if flat.exact {
                let exact = exact_variance_quadrature(&model, &levels, &f, p)
                    .with_context(|| format!("exact variance at p = {p}"))?;
                rec["exact"] = json!(exact.value);
                rec["ratio"] = json!(exact.value / prediction);
                rec["quadrature_change"] = json!(exact.relative_change);
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    out.json(
        "predict.json",
        json!({
            "function": f.name(),
            "levels": levels.len(),
            "records": records,
        }),
    )?;
    Ok(true)
}

fn draw<F>(n: usize, seed: u64, sampler: F) -> Result<Vec<PointSample>>
where
    F: Fn(u64) -> Result<PointSample> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| sampler(seed.wrapping_add(i)))
        .collect()
}

fn write_stats_csv(w: &mut impl Write, samples: &[PointSample], values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "sample_id,seed,count,statistic")?;
    for (i, (s, v)) in samples.iter().zip(values).enumerate() {
        writeln!(w, "{i},{},{},{v:.16e}", s.seed, s.len())?;
    }
    Ok(())
}

fn moments_json(run: &StatRun) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("n_samples".into(), json!(run.n_samples()));
    m.insert("mean".into(), json!(run.mean));
    m.insert("var".into(), json!(run.variance));
    m.insert("se_mean".into(), json!(run.se_mean));
    m.insert("se_var".into(), json!(run.se_variance));
    m.insert("skew".into(), json!(run.skewness));
    m.insert("kurtosis".into(), json!(run.excess_kurtosis));
    m.insert("count_variance".into(), json!(run.count_variance()));
    m
}

fn sample_flat(cfg: &ExperimentConfig, seed: u64, out: &mut Artifacts) -> Result<bool> {
    let (model, levels) = cfg.levels()?;
    let flat = cfg.flat()?;
    let stats = cfg.stats()?;
    let f = cfg.test_function(2 * model.n())?;
    let kernel = FlatKernel::new(&model, &levels);
    let grid = BoxGrid {
        max_nodes: flat.max_nodes,
        ..BoxGrid::centered(2 * model.n(), flat.box_radius, flat.step)
    };
    for &p in &flat.p {
        info!("sampling p = {p}");
        let ens = FlatEnsemble::new(&kernel, p, &grid).with_context(|| format!("flat ensemble at p = {p}"))?;
        let samples = draw(stats.n_samples, seed, |s| Ok(ens.sample(s)?))?;
        let values: Vec<f64> = samples.iter().map(|s| linear_statistic(&f, s)).collect();
        let counts = samples.iter().map(PointSample::len).collect();
        let run = StatRun::from_values(values.clone(), counts, seed)?;
        let prediction = predicted_variance(&model, &levels, &f, p)?;
        let f_nodes: Vec<f64> = (0..ens.report().ground.len())
            .map(|i| f.value(&ens.physical_point(i)))
            .collect();
        let (discrete_mean, discrete_var) = discrete_moments(ens.report(), &f_nodes);
        let mut summary = moments_json(&run);
        summary.insert("p".into(), json!(p));
        summary.insert("prediction".into(), json!(prediction));
        summary.insert("ratio".into(), json!(run.variance / prediction));
        summary.insert("expected_count".into(), json!(ens.report().expected_count()));
        summary.insert("discrete_mean".into(), json!(discrete_mean));
        summary.insert("discrete_var".into(), json!(discrete_var));
        summary.insert("nodes".into(), json!(ens.report().ground.len()));
        let ks = clt_check(&run, prediction).ok().map(|c| c.ks);
        summary.insert("ks".into(), json!(ks));

        out.csv(&format!("samples_p{p}.csv"), |w| dpp::write_samples_csv(w, &samples))?;
        out.csv(&format!("stats_p{p}.csv"), |w| write_stats_csv(w, &samples, &values))?;
        out.csv(&format!("spectrum_p{p}.csv"), |w| {
            dpp::write_spectrum_csv(w, &ens.report().eigenvalues)
        })?;
        out.json(&format!("summary_p{p}.json"), Value::Object(summary))?;
    }
    Ok(true)
}

fn torus_config(m: usize, p: u32, v: f64) -> Result<TorusConfig> {
    let c = TorusConfig::new(m, p)?;
    Ok(if v != 0.0 { c.with_constant_potential(v)? } else { c })
}

struct TorusResult {
    p: u32,
    eigenvalues: Vec<f64>,
    report: landau_dpp::torus::ClusterReport,
    fit: landau_dpp::torus::DecayFit,
    record: Value,
    valid: bool,
}

fn torus_spectrum(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<bool> {
    let t = cfg.torus()?;
    let window = cfg.torus_window()?;
    let model = TorusConfig::continuum_model(t.v);
    let levels = model.validate_window(&window)?;
    let cutoff = t.cutoff.unwrap_or(t.v + 20.0 * std::f64::consts::PI);
    let results = t
        .p
        .par_iter()
        .map(|&p| -> Result<TorusResult> {
            info!("torus M = {}, p = {p}", t.m);
            let lattice = MagneticLattice::build(&torus_config(t.m, p, t.v)?)?;
            let spec = eigensolve(&lattice)?;
            let report = cluster_spectrum(&spec.eigenvalues, &model, cutoff, t.width)?;
            let n_states = count_states(&spec.eigenvalues, &window, &model)?;
            let proj = projection_kernel(&spec, &window);
            let fit = decay_fit(&proj, p);
            let herm = lattice.hermiticity_defect();
            let plaq = lattice.max_plaquette_error();
            let idem = proj.idempotency_defect();
            let valid = herm <= 1e-12 && plaq <= 1e-10 && idem <= 1e-8;
            let clusters: Vec<Value> = report
                .clusters
                .iter()
                .map(|c| {
                    json!({
                        "k": c.k,
                        "level": c.level,
                        "count": c.count,
                        "center": c.center,
                        "center_deviation": c.center_deviation,
                        "max_deviation": c.max_deviation,
                        "resolved": c.resolved,
                    })
                })
                .collect();
            let record = json!({
                "p": p,
                "n_states": n_states,
                "prediction": torus_demailly_prediction(&levels, p),
                "lowest_cluster_count": report.lowest_count(),
                "clusters": clusters,
                "unassigned": report.unassigned.len(),
                "decay_rate": fit.rate,
                "gaussian_curvature": fit.gaussian_curvature,
                "decay_guard_ok": fit.guard_ok,
                "decay_truncated": fit.truncated,
                "hermiticity_defect": herm,
                "max_plaquette_error": plaq,
                "idempotency_defect": idem,
            });
            Ok(TorusResult {
                p,
                eigenvalues: spec.eigenvalues,
                report,
                fit,
                record,
                valid,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut valid = true;
    let mut records = Vec::new();
    for r in results {
        let m = t.m;
        out.csv(&format!("spectrum_M{m}_p{}.csv", r.p), |w| {
            write_spectrum_csv(w, &r.eigenvalues, &r.report)
        })?;
        out.csv(&format!("decay_M{m}_p{}.csv", r.p), |w| write_decay_csv(w, &r.fit))?;
        valid &= r.valid;
        records.push(r.record);
    }
    out.json("torus_spectrum.json", json!({ "m": t.m, "records": records }))?;
    Ok(valid)
}

fn torus_ensemble(cfg: &ExperimentConfig, seed: u64, out: &mut Artifacts) -> Result<bool> {
    let t = cfg.torus()?;
    let stats = cfg.stats()?;
    let window = cfg.torus_window()?;
    let f = cfg.test_function(2)?;
    let mut records = Vec::new();
    for &p in &t.p {
        info!("torus ensemble M = {}, p = {p}", t.m);
        let tc = torus_config(t.m, p, t.v)?;
        let spec = eigensolve(&MagneticLattice::build(&tc)?)?;
        let basis = projection_kernel(&spec, &window).basis()?;
        let n_points = basis.rank();
        if n_points == 0 {
            bail!("the window holds no torus eigenvalues at p = {p}");
        }
        let samples = draw(stats.n_samples, seed, |s| Ok(sample_torus_ensemble(&basis, s)?))?;
        let values: Vec<f64> = samples.iter().map(|s| linear_statistic(&f, s)).collect();
        let counts = samples.iter().map(PointSample::len).collect();
        let run = StatRun::from_values(values.clone(), counts, seed)?;
        let sites: Vec<f64> = (0..t.m * t.m).map(|i| f.value(&tc.site_coords(i))).collect();
        let limit = sites.iter().sum::<f64>() / sites.len() as f64;
        let sup_sq = sites.iter().map(|v| v * v).fold(0.0, f64::max);
        let lln = lln_check(&run, n_points as f64, limit, sup_sq);
        if run.count_variance() != 0.0 {
            bail!("projection ensemble at p = {p} returned varying point counts");
        }
        let mut summary = moments_json(&run);
        summary.insert("p".into(), json!(p));
        summary.insert("n_points".into(), json!(n_points));
        summary.insert("limit".into(), json!(limit));
        summary.insert("ratio".into(), json!(lln.ratio));
        summary.insert("z".into(), json!(lln.z));
        summary.insert("rms_deviation".into(), json!(lln.rms_deviation));
        summary.insert("variance_bound_ok".into(), json!(lln.variance_bound_ok));
        summary.insert("chebyshev_ok".into(), json!(lln.chebyshev_ok));
        let m = t.m;
        out.csv(&format!("samples_M{m}_p{p}.csv"), |w| dpp::write_samples_csv(w, &samples))?;
        out.csv(&format!("stats_M{m}_p{p}.csv"), |w| write_stats_csv(w, &samples, &values))?;
        records.push(Value::Object(summary));
    }
    out.json("torus_ensemble.json", json!({ "m": t.m, "records": records }))?;
    Ok(true)
}

fn verify(seed: u64, out: &mut Artifacts) -> Result<bool> {
    let outcomes = acceptance::run_all(seed);
    let mut all = true;
    let mut records = Vec::new();
    for o in &outcomes {
        println!("{o}");
        all &= o.passed;
        let metrics: Map<String, Value> = o.metrics.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        records.push(json!({
            "id": o.id,
            "title": o.title,
            "passed": o.passed,
            "metrics": metrics,
            "notes": o.notes,
        }));
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    out.json("verify.json", json!({ "criteria": records }))?;
    Ok(all)
}
