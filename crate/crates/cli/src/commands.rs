//! One function per subcommand. Each returns its stdout summary line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use croplrp::dataio::{generate_synthetic, load_dataset, save_dataset, split_spatial, Dataset};
use croplrp::experiments::{
    curve_auc, fit_window, normalized_auc_pair, prune_curve_random, prune_curve_targeted,
    read_earliness, run_window, write_curves, write_earliness,
};
use croplrp::lrp::{
    conservation_gap, explain, read_relevance_long, read_timestep_relevance, timestep_relevance,
    write_relevance_long, write_timestep_relevance,
};
use croplrp::model::{argmax, init_model, load_params, save_params, ModelInput};
use croplrp::report::{class_panels_svg, earliness_table_svg, parcel_svg};
use croplrp::timeframe::{
    aggregate_relevance, dominant_peaks, profile_from_relevances, read_profile, timeframes,
    write_profile, write_timeframes, SampleRelevance, Timeframe,
};
use croplrp::train::{evaluate, train_with_progress, write_history};
use croplrp::Parameters;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command, Invalid};

struct Ctx<'a> {
    out: &'a Path,
    cfg: RunConfig,
    quiet: bool,
}

impl Ctx<'_> {
    fn note(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn target(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = RunConfig::load(cli.common.config.as_deref())?.resolve(cli.common.seed)?;
    let ctx = Ctx {
        out: &cli.common.out,
        cfg,
        quiet: cli.common.quiet,
    };
    std::fs::create_dir_all(ctx.out)
        .with_context(|| format!("cannot create run directory {}", ctx.out.display()))?;
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train { data } => train_cmd(&ctx, &ctx.path(data, "train.csv")),
        Command::Eval { model, data } => {
            eval(&ctx, &ctx.path(model, "model.json"), &ctx.path(data, "test.csv"))
        }
        Command::Explain { model, data } => {
            explain_cmd(&ctx, &ctx.path(model, "model.json"), &ctx.path(data, "train.csv"))
        }
        Command::Timeframe { profile, n } => timeframe_cmd(
            &ctx,
            &ctx.path(profile, "profile.csv"),
            n.as_deref().unwrap_or(&ctx.cfg.timeframe.n_list),
        ),
        Command::PruneExp { model, data, trials } => prune_exp(
            &ctx,
            &ctx.path(model, "model.json"),
            &ctx.path(data, "test.csv"),
            trials.unwrap_or(ctx.cfg.experiments.random_trials),
        ),
        Command::Earliness { data, n } => earliness(
            &ctx,
            &ctx.path(data, "data.csv"),
            n.as_deref().unwrap_or(&ctx.cfg.timeframe.n_list),
        ),
        Command::Report { run, data } => {
            let run = run.clone().unwrap_or_else(|| ctx.out.to_path_buf());
            let data = data.clone().unwrap_or_else(|| run.join("data.csv"));
            report(&ctx, &run, &data)
        }
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Invalid(format!("cannot open {}: {e}", path.display())).into())
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn load_model(path: &Path) -> Result<Parameters> {
    Ok(load_params(path)?)
}

fn check_compatible(params: &Parameters, ds: &Dataset) -> Result<()> {
    let m = &params.config;
    if m.n_bands != ds.n_bands() || m.n_classes != ds.n_classes() || m.max_timesteps < ds.n_timesteps() {
        return Err(Invalid(format!(
            "model expects {} bands, {} classes, at most {} timesteps; data has {}, {}, {}",
            m.n_bands,
            m.n_classes,
            m.max_timesteps,
            ds.n_bands(),
            ds.n_classes(),
            ds.n_timesteps()
        ))
        .into());
    }
    Ok(())
}

fn split(ctx: &Ctx, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let e = &ctx.cfg.experiments;
    Ok(split_spatial(ds, e.test_fraction, e.split_seed)?)
}

fn gen_data(ctx: &Ctx) -> Result<String> {
    let ds = generate_synthetic(&ctx.cfg.synth)?;
    let (train, test) = split(ctx, &ds)?;
    save_dataset(&ds, ctx.target("data.csv"))?;
    save_dataset(&train, ctx.target("train.csv"))?;
    save_dataset(&test, ctx.target("test.csv"))?;
    write_json(&ctx.target("config.json"), &ctx.cfg)?;
    Ok(format!(
        "generated {} samples ({} classes, {} bands, {} timesteps): {} train, {} test",
        ds.len(),
        ds.n_classes(),
        ds.n_bands(),
        ds.n_timesteps(),
        train.len(),
        test.len()
    ))
}

fn train_cmd(ctx: &Ctx, data: &Path) -> Result<String> {
    let ds = load_dataset(data)?;
    let mcfg = ctx.cfg.model.model_config(ds.n_bands(), ds.n_timesteps(), ds.n_classes());
    let init: Parameters = init_model(&mcfg, ctx.cfg.train.seed)?;
    let (params, history) = train_with_progress(&init, &ds, &ctx.cfg.train, |r| {
        let val = r.val_accuracy.map(|a| format!(", val acc {a:.4}")).unwrap_or_default();
        ctx.note(format_args!(
            "epoch {:>3}: loss {:.4}, train acc {:.4}{val}",
            r.epoch, r.train_loss, r.train_accuracy
        ));
    })?;
    save_params(&params, ctx.target("model.json"))?;
    write_file(&ctx.target("history.csv"), |w| Ok(write_history(&history, w)?))?;
    let train_acc = evaluate(&params, &ds)?.overall_accuracy;
    Ok(format!(
        "trained {} epochs on {} samples: train accuracy {train_acc:.4}",
        history.len(),
        ds.len()
    ))
}

fn eval(ctx: &Ctx, model: &Path, data: &Path) -> Result<String> {
    let params = load_model(model)?;
    let ds = load_dataset(data)?;
    check_compatible(&params, &ds)?;
    let m = evaluate(&params, &ds)?;
    write_json(&ctx.target("metrics.json"), &m)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    Ok(format!(
        "overall accuracy {:.4} on {} samples, mean producer accuracy {}, mean user accuracy {}",
        m.overall_accuracy,
        m.n_samples,
        fmt(m.mean_producer_accuracy()),
        fmt(m.mean_user_accuracy())
    ))
}

fn explain_cmd(ctx: &Ctx, model: &Path, data: &Path) -> Result<String> {
    let params = load_model(model)?;
    let ds = load_dataset(data)?;
    check_compatible(&params, &ds)?;
    let days = ds.axis.days_of_year();
    let mut maps = Vec::with_capacity(ds.len());
    let mut samples = Vec::with_capacity(ds.len());
    let mut gap_sum = 0.0;
    let mut near_zero = 0;
    for (index, s) in ds.samples.iter().enumerate() {
        let e = explain(&params, &ModelInput::new(s, &days), &s.parcel_id, &ctx.cfg.lrp)?;
        gap_sum += conservation_gap(&e.map, &e.trace);
        near_zero += e.diagnostics.near_zero_denominators;
        samples.push(SampleRelevance {
            index,
            label: s.label,
            predicted: argmax(e.trace.logits.as_slice().expect("standard layout")),
            target_class: e.map.target_class,
            values: timestep_relevance(&e.map).values.to_vec(),
        });
        maps.push(e.map);
    }
    let profile = profile_from_relevances(
        &samples,
        ds.n_classes(),
        ds.n_timesteps(),
        &ctx.cfg.timeframe.aggregate,
    )?;
    let dates = ds.axis.dates();
    let n_band_maps = ctx.cfg.explain.max_band_maps.min(maps.len());
    write_file(&ctx.target("relevance_long.csv"), |w| {
        Ok(write_relevance_long(&maps[..n_band_maps], dates, &ds.band_names, w)?)
    })?;
    write_file(&ctx.target("relevance_timestep.csv"), |w| {
        Ok(write_timestep_relevance(&maps, dates, w)?)
    })?;
    write_file(&ctx.target("profile.csv"), |w| {
        Ok(write_profile(&profile, &ds.axis, &ds.class_names, w)?)
    })?;

    let threshold = ctx.cfg.timeframe.peak_threshold;
    let mut peak_counts = Vec::new();
    write_file(&ctx.target("peaks.csv"), |w| {
        writeln!(w, "class,date,score")?;
        if let Some(pc) = &profile.per_class {
            for (c, row) in pc.rows().into_iter().enumerate() {
                // Profiles are means of per-sample L∞-normalized R_t, so the
                // threshold applies as is.
                let peaks = dominant_peaks(&row.to_vec(), threshold);
                for (t, v) in &peaks {
                    writeln!(w, "{},{},{v:e}", ds.class_names[c], dates[*t].format("%Y-%m-%d"))?;
                }
                peak_counts.push(peaks.len());
            }
        }
        Ok(())
    })?;
    if near_zero > 0 {
        ctx.note(format_args!("{near_zero} near-zero denominators during propagation"));
    }
    Ok(format!(
        "explained {} samples: mean conservation gap {:.3e}, profile from {} correctly classified samples, dominant peaks per class {:?}",
        ds.len(),
        gap_sum / ds.len().max(1) as f64,
        profile.n_samples_used,
        peak_counts
    ))
}

fn describe(tf: &Timeframe) -> String {
    format!("dt{} {}..{} ({} d)", tf.n, tf.start, tf.end, tf.length_days())
}

fn timeframe_cmd(ctx: &Ctx, profile: &Path, ns: &[usize]) -> Result<String> {
    let table = read_profile(open_input(profile)?)?;
    if let Some(&bad) = ns.iter().find(|&&n| n == 0 || n > table.axis.len()) {
        return Err(Invalid(format!("window size {bad} outside 1..={}", table.axis.len())).into());
    }
    let tfs = timeframes(&table.pooled, &table.axis, ns)?;
    write_file(&ctx.target("timeframes.csv"), |w| Ok(write_timeframes(&tfs, w)?))?;
    Ok(tfs.iter().map(describe).collect::<Vec<_>>().join("; "))
}

fn prune_exp(ctx: &Ctx, model: &Path, data: &Path, trials: usize) -> Result<String> {
    if trials == 0 {
        return Err(Invalid("--trials must be at least 1".into()).into());
    }
    let params = load_model(model)?;
    let mut ds = load_dataset(data)?;
    check_compatible(&params, &ds)?;
    if let Some(cap) = ctx.cfg.experiments.max_prune_samples {
        ds = ds.with_samples(ds.samples.iter().take(cap).cloned().collect());
    }
    ctx.note(format_args!("targeted pruning on {} samples", ds.len()));
    let targeted = prune_curve_targeted(&params, &ds, &ctx.cfg.lrp)?;
    ctx.note(format_args!("random pruning, {trials} trials"));
    let random = prune_curve_random(&params, &ds, trials, ctx.cfg.experiments.random_seed)?;
    write_file(&ctx.target("prune_curves.csv"), |w| Ok(write_curves(&[&targeted, &random], w)?))?;
    let (nt, nr) = normalized_auc_pair(&targeted, &random);
    let summary = json!({
        "n_samples": ds.len(),
        "trials": trials,
        "auc_targeted": curve_auc(&targeted),
        "auc_random": curve_auc(&random),
        "auc_targeted_normalized": nt,
        "auc_random_normalized": nr,
        "mse_25_targeted": targeted.mse_at_fraction(0.25),
        "mse_25_random": random.mse_at_fraction(0.25),
    });
    write_json(&ctx.target("prune_auc.json"), &summary)?;
    Ok(format!(
        "pruning AUC targeted {:.4e}, random {:.4e} ({} samples, {trials} trials)",
        curve_auc(&targeted),
        curve_auc(&random),
        ds.len()
    ))
}

fn earliness(ctx: &Ctx, data: &Path, ns: &[usize]) -> Result<String> {
    let ds = load_dataset(data)?;
    if let Some(&bad) = ns.iter().find(|&&n| n == 0 || n > ds.n_timesteps()) {
        return Err(Invalid(format!("window size {bad} outside 1..={}", ds.n_timesteps())).into());
    }
    let (train, test) = split(ctx, &ds)?;
    let mcfg = ctx.cfg.model.model_config(ds.n_bands(), ds.n_timesteps(), ds.n_classes());
    let tcfg = &ctx.cfg.train;

    ctx.note("training on the full span");
    let full_span = Timeframe::full_span(&train.axis)?;
    let (full, params) = fit_window::<f64>(&train, &test, &full_span, None, tcfg, &mcfg)?;
    let profile = aggregate_relevance(&params, &train, &ctx.cfg.lrp, &ctx.cfg.timeframe.aggregate)?;
    let windows = timeframes(&profile.per_timestep, &train.axis, ns)?;
    let mut results = vec![full];
    for w in &windows {
        ctx.note(format_args!("training on {}", describe(w)));
        results.push(run_window::<f64>(&train, &test, w, Some(w.n), tcfg, &mcfg)?);
    }
    write_file(&ctx.target("earliness.csv"), |w| Ok(write_earliness(&results, w)?))?;
    write_file(&ctx.target("earliness_windows.csv"), |w| Ok(write_timeframes(&windows, w)?))?;
    let parts: Vec<String> = results
        .iter()
        .map(|r| {
            let label = r.window_n.map_or("full".to_string(), |n| format!("dt{n}"));
            format!("{label} {}..{} test acc {:.4}", r.start, r.end, r.test_accuracy)
        })
        .collect();
    Ok(parts.join("; "))
}

fn report(ctx: &Ctx, run: &Path, data: &Path) -> Result<String> {
    let mut written = Vec::new();
    let timestep_path = run.join("relevance_timestep.csv");
    let long_path = run.join("relevance_long.csv");
    let earliness_path = run.join("earliness.csv");

    if timestep_path.exists() || long_path.exists() {
        let ds = load_dataset(data)?;
        if timestep_path.exists() {
            let rows = read_timestep_relevance(open_input(&timestep_path)?)?;
            let by_id: std::collections::HashMap<&str, &Vec<f64>> =
                rows.iter().map(|(id, _, v)| (id.as_str(), v)).collect();
            let relevance: Vec<Option<Vec<f64>>> = ds
                .samples
                .iter()
                .map(|s| by_id.get(s.parcel_id.as_str()).map(|v| (*v).clone()))
                .collect();
            let svg = class_panels_svg(&ds, &relevance);
            std::fs::write(ctx.target("fig_classes.svg"), svg)?;
            written.push("fig_classes.svg");
        }
        if long_path.exists() {
            let maps = read_relevance_long(open_input(&long_path)?, ds.n_bands())?;
            let parcel = maps
                .iter()
                .find_map(|(id, class, map)| {
                    ds.samples.iter().find(|s| &s.parcel_id == id).map(|s| (s, *class, map))
                });
            if let Some((s, class, map)) = parcel {
                if map.ncols() != ds.n_timesteps() {
                    return Err(Invalid(format!(
                        "{} has {} timesteps, {} has {}",
                        long_path.display(),
                        map.ncols(),
                        data.display(),
                        ds.n_timesteps()
                    ))
                    .into());
                }
                let title = format!(
                    "parcel {} ({}), relevance for {}",
                    s.parcel_id,
                    ds.class_names[s.label],
                    ds.class_names.get(class).map_or("?", String::as_str)
                );
                let svg = parcel_svg(&title, &s.values, &s.mask, map, ds.axis.dates(), &ds.band_names);
                std::fs::write(ctx.target("fig_parcel.svg"), svg)?;
                written.push("fig_parcel.svg");
            }
        }
    }
    if earliness_path.exists() {
        let rows = read_earliness(open_input(&earliness_path)?)?;
        std::fs::write(ctx.target("table_earliness.svg"), earliness_table_svg(&rows))?;
        written.push("table_earliness.svg");
    }
    if written.is_empty() {
        return Err(Invalid(format!(
            "{} holds no relevance or earliness files to report on",
            run.display()
        ))
        .into());
    }
    Ok(format!("wrote {}", written.join(", ")))
}
