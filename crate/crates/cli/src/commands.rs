use crate::args::{ConfigArgs, OptimizeArgs, ReplayArgs, ResidualArg};
use anyhow::{bail, Context, Result};
use ovlink_core::harness::Manifest;
use ovlink_core::{
    emit_outputs, optimize_pilot_density, optimize_pilot_density_model, predict_point, replay,
    run_sweep, ser_curve, write_prediction_csv, DetectorKind, ExperimentConfig, MetricRow,
    ResidualSource, Scenario, SerModelConfig,
};
use serde_json::{json, Value};
use std::fs;
use std::path::Path;

fn model_base(cfg: &ExperimentConfig, alpha: f64, n_d: usize) -> SerModelConfig {
    SerModelConfig {
        n_r: cfg.n_r,
        seed: cfg.master_seed,
        ..SerModelConfig::new(alpha, n_d, cfg.n_p)
    }
}

pub fn simulate(args: &ConfigArgs) -> Result<Value> {
    let cfg = args.resolve()?;
    let points = cfg.points().len();
    if points != 1 {
        bail!(ovlink_core::Error::InvalidConfig(format!(
            "simulate runs one operating point but the configuration has {points}; \
             pin --scenario, --alpha, --n-d and --snr-db or use sweep"
        )));
    }
    let table = run_sweep(&cfg)?;
    let manifest = match &cfg.output {
        Some(dir) => Some(emit_outputs(&table, &cfg, dir)?),
        None => None,
    };
    Ok(json!({
        "config_hash": cfg.hash(),
        "rows": table.rows,
        "iterations": table.iterations,
        "failures": table.failures,
        "manifest": manifest,
    }))
}

pub fn sweep(args: &ConfigArgs) -> Result<Value> {
    let cfg = args.resolve()?;
    let Some(dir) = cfg.output.clone() else {
        bail!(ovlink_core::Error::InvalidConfig(
            "sweep needs an output directory (--out or `output` in the config)".into()
        ));
    };
    let table = run_sweep(&cfg)?;
    let manifest = emit_outputs(&table, &cfg, &dir)?;
    let failed: usize = table.rows.iter().map(|r| r.failed).sum();
    Ok(json!({
        "output": dir,
        "rows": table.rows.len(),
        "failed_trial_records": failed,
        "manifest": manifest,
    }))
}

pub fn predict(args: &ConfigArgs) -> Result<Value> {
    let cfg = args.resolve_imap()?;
    let mut rows = Vec::new();
    for &scenario in &cfg.scenarios {
        for &alpha in &cfg.alphas {
            for &n_d in &cfg.n_d {
                let base = model_base(&cfg, alpha, n_d);
                for &snr in &cfg.snr_db {
                    rows.push(predict_point(
                        &base,
                        scenario == Scenario::InterferencePresent,
                        snr,
                    )?);
                }
            }
        }
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        write_prediction_csv(&dir.join("predictions.csv"), &rows)?;
        fs::write(
            dir.join("predictions.json"),
            serde_json::to_string_pretty(&rows)?,
        )?;
    }
    Ok(json!({ "config_hash": cfg.hash(), "predictions": rows }))
}

/// P^e per n_d from the model, with the residual power either measured by
/// a short I-MAP simulation or taken from its floor.
pub fn optimize_pilot(args: &OptimizeArgs) -> Result<Value> {
    let cfg = args.config.resolve_imap()?;
    let mut results = Vec::new();
    for &alpha in &cfg.alphas {
        for &snr in &cfg.snr_db {
            let base = model_base(&cfg, alpha, cfg.n_d[0]);
            let model = match args.residual {
                ResidualArg::Floor => optimize_pilot_density_model(&base, snr, &cfg.n_d)?,
                ResidualArg::Measured => {
                    let sim = ExperimentConfig {
                        scenarios: vec![Scenario::InterferencePresent],
                        alphas: vec![alpha],
                        snr_db: vec![snr],
                        detectors: vec![DetectorKind::IMap],
                        ..cfg.clone()
                    };
                    let table = run_sweep(&sim)?;
                    optimize_pilot_density(&cfg.n_d, cfg.n_p, |n_d| {
                        let row = table
                            .rows
                            .iter()
                            .find(|r| r.n_d == n_d)
                            .expect("one row per n_d");
                        let m = SerModelConfig {
                            n_d,
                            residual: ResidualSource::Measured(row.residual_power),
                            ..base
                        };
                        Ok(ser_curve(&m, &[snr])?.points[0].p_e)
                    })?
                }
            };
            results.push(json!({
                "alpha": alpha,
                "snr_db": snr,
                "interior_maximum": model.interior_maximum(),
                "model": model,
            }));
        }
    }
    let out = json!({ "config_hash": cfg.hash(), "residual": format!("{:?}", args.residual).to_lowercase(), "results": results });
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("optimize_pilot.json"),
            serde_json::to_string_pretty(&out)?,
        )?;
    }
    Ok(out)
}

fn read_row(path: &Path, index: usize) -> Result<MetricRow> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let Some(row) = reader.deserialize().nth(index) else {
        bail!(ovlink_core::Error::InvalidConfig(format!(
            "{} has no row {index}",
            path.display()
        )));
    };
    Ok(row?)
}

fn csv_line(row: &MetricRow) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(row)?;
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn replay_row(args: &ReplayArgs) -> Result<Value> {
    let manifest_path = args.dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let row = read_row(&args.dir.join("metrics.csv"), args.row)?;
    let outcome = replay(&manifest.config, &row)?;
    let again = outcome
        .rows
        .iter()
        .find(|r| r.detector == row.detector)
        .context("replayed point lacks the row's detector")?;
    // Compare through the same CSV formatting the sweep used.
    let matches = csv_line(again)? == csv_line(&row)?;
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&outcome)?)?;
    }
    Ok(json!({
        "row": args.row,
        "point": outcome.point,
        "matches": matches,
        "original": row,
        "replayed": again,
        "completed_trials": outcome.trials.len(),
        "failed_trials": outcome.failures.len(),
    }))
}
