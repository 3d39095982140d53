//! Subcommand implementations. Each reads its settings from a
//! [`RunConfig`] and writes only under `cfg.out`.

use std::collections::HashMap;
use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};

use netscope::actmax::{self, ActMaxConfig, ActMode};
use netscope::data::synthetic::gratings;
use netscope::data::{load_cifar10, load_ppm_dir, Dataset, Split, WhitenStats};
use netscope::graph::{import_raw, Checkpoint};
use netscope::mine::{self, NeuronMode, StimulusRecord};
use netscope::ppm::{self, RgbImage};
use netscope::probe::{self, InactiveReport, NoiseMode};
use netscope::train::{self, eval_input, Augment, TrainConfig, Trainer};
use netscope::vfilter::{self, CouplingOrder};
use netscope::{rf, tsv, ArchSpec, Family, ModelGraph, Scalar};

use crate::args::Command;
use crate::{manifest, DataError, RunConfig, UsageError};

/// Sets up threads and the output directory, runs the command, then writes
/// `run.cfg` and `manifest.json`.
pub fn execute(command: &Command) -> Result<()> {
    let cfg = command.run_config()?;
    configure_threads(&cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let sections = command.sections();
    manifest::write_config(&cfg, sections)?;
    match command {
        Command::Train(_) => cmd_train(&cfg, sections),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Rf(_) => cmd_rf(&cfg),
        Command::Scan(_) => cmd_scan(&cfg),
        Command::Meanstim(_) => cmd_meanstim(&cfg),
        Command::Vfilter(_) => cmd_vfilter(&cfg),
        Command::Actmax(_) => cmd_actmax(&cfg),
        Command::Inactive(_) => cmd_inactive(&cfg),
        Command::Noise(_) => cmd_noise(&cfg),
        Command::Export(_) => cmd_export(&cfg),
    }?;
    let path = manifest::write_manifest(&cfg, sections)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn configure_threads(cfg: &RunConfig) -> Result<()> {
    let threads = if cfg.get::<bool>("run.deterministic")? {
        Some(1)
    } else {
        match cfg.get_opt::<usize>("run.threads")? {
            Some(n) => Some(n),
            None => match std::env::var("NETSCOPE_THREADS") {
                Ok(v) => Some(v.trim().parse().map_err(|_| UsageError(format!("NETSCOPE_THREADS=`{v}` is not a number")))?),
                Err(_) => None,
            },
        }
    };
    if let Some(n) = threads {
        // a pool may already exist when commands run in-process
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already configured; --threads {n} ignored");
        }
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn parse_with<T>(cfg: &RunConfig, key: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    let v = cfg.raw(key);
    f(v).ok_or_else(|| usage(format!("bad value `{v}` for {key}")))
}

fn family(cfg: &RunConfig) -> Result<Family> {
    cfg.raw("model.family").parse::<Family>().map_err(|e| usage(e.to_string()))
}

/// Architecture from the `model.*` keys; `classes` fills in an unset
/// class count.
fn arch(cfg: &RunConfig, classes: Option<usize>) -> Result<ArchSpec> {
    let family = family(cfg)?;
    let set_classes = cfg.get_opt::<usize>("model.num_classes")?;
    let side = cfg.get_opt::<usize>("model.input")?;
    let mut arch = match cfg.raw("model.preset") {
        "resnet34" => ArchSpec::resnet34(family, set_classes.or(classes).unwrap_or(1000)),
        "scaled" => {
            let blocks = cfg.list::<usize>("model.stage_blocks")?.unwrap_or_default();
            let side = side.unwrap_or(32);
            ArchSpec::scaled(
                family,
                &blocks,
                cfg.get("model.base_channels")?,
                (3, side, side),
                set_classes.or(classes).unwrap_or(10),
            )
        }
        other => return Err(usage(format!("unknown model.preset `{other}` (expected resnet34 or scaled)"))),
    };
    if let Some(s) = side {
        arch.input = (3, s, s);
    }
    Ok(arch.with_seed(cfg.seed()?))
}

/// The checkpoint's model and whitening stats, or a freshly initialised
/// model from `model.*`.
fn load_model(cfg: &RunConfig) -> Result<(ModelGraph<f32>, Option<WhitenStats>)> {
    match cfg.path("model.checkpoint") {
        Some(p) => {
            let ck = Checkpoint::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            Ok((ck.to_model()?, ck.meta.whiten.clone()))
        }
        None => {
            info!("no checkpoint given; using an untrained {} model", cfg.raw("model.preset"));
            Ok((arch(cfg, None)?.build()?, None))
        }
    }
}

fn data_dir(cfg: &RunConfig, key: &str) -> Result<std::path::PathBuf> {
    let dir = cfg
        .path(key)
        .ok_or_else(|| anyhow!(DataError(format!("{key} is not set"))))?;
    if !dir.is_dir() {
        bail!(DataError(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn load_ppm(cfg: &RunConfig, key: &str) -> Result<Dataset> {
    let dir = data_dir(cfg, key)?;
    let manifest = dir.join(cfg.raw("data.manifest"));
    Ok(load_ppm_dir(&dir, &manifest, cfg.get_opt("data.classes")?)?)
}

fn limit(cfg: &RunConfig, ds: Dataset) -> Result<Dataset> {
    Ok(match cfg.get_opt::<usize>("data.limit")? {
        Some(n) => ds.take(n),
        None => ds,
    })
}

fn synthetic(cfg: &RunConfig, count_key: &str, stream: u64) -> Result<Dataset> {
    let classes = cfg.get_opt::<usize>("data.classes")?.unwrap_or(10);
    let seed = cfg.get::<u64>("data.seed")?.wrapping_mul(2).wrapping_add(stream);
    Ok(gratings(cfg.get(count_key)?, cfg.get("data.side")?, classes, seed))
}

/// Dataset analysed by eval / scan / probe commands.
fn analysis_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match cfg.raw("data.source") {
        "ppm" => load_ppm(cfg, "data.dir")?,
        "cifar10" => load_cifar10(data_dir(cfg, "data.dir")?)?.1,
        "synthetic" => synthetic(cfg, "data.val_count", 1)?,
        other => return Err(usage(format!("unknown data.source `{other}`"))),
    };
    limit(cfg, ds)
}

fn training_data(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let (mut train, val) = match cfg.raw("data.source") {
        "ppm" => {
            let val = match cfg.opt("data.val_dir") {
                Some(_) => Some(load_ppm(cfg, "data.val_dir")?),
                None => None,
            };
            (load_ppm(cfg, "data.dir")?, val)
        }
        "cifar10" => {
            let (t, v) = load_cifar10(data_dir(cfg, "data.dir")?)?;
            (t, Some(v))
        }
        "synthetic" => (synthetic(cfg, "data.count", 0)?, Some(synthetic(cfg, "data.val_count", 1)?)),
        other => return Err(usage(format!("unknown data.source `{other}`"))),
    };
    train.split = Split::Train;
    Ok((limit(cfg, train)?, val))
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let augment = parse_with(cfg, "train.augment", |s| match s {
        "crop_flip" => Some(Augment::CropFlip),
        "crop_only" => Some(Augment::CropOnly),
        "none" => Some(Augment::None),
        _ => None,
    })?;
    let tc = TrainConfig {
        lr0: cfg.get("train.lr0")?,
        momentum: cfg.get("train.momentum")?,
        weight_decay: cfg.get("train.weight_decay")?,
        lr_drop_factor: cfg.get("train.lr_drop_factor")?,
        lr_drop_every: cfg.get("train.lr_drop_every")?,
        epochs: cfg.get("train.epochs")?,
        batch: cfg.get("train.batch")?,
        eval_batch: cfg.get("train.eval_batch")?,
        seed: cfg.seed()?,
        decay_all: cfg.get("train.decay_all")?,
        augment,
        flip_prob: cfg.get("train.flip_prob")?,
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;
    Ok(tc)
}

fn cmd_train(cfg: &RunConfig, sections: &[&str]) -> Result<()> {
    let tc = train_config(cfg)?;
    let (train_ds, val_ds) = training_data(cfg)?;
    let mut trainer = match cfg.path("train.resume") {
        Some(p) => {
            let ck = Checkpoint::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            info!("resuming from {} after epoch {}", p.display(), ck.meta.epoch);
            Trainer::resume(&ck, &train_ds, val_ds.as_ref(), tc)?
        }
        None => {
            let model = arch(cfg, Some(train_ds.num_classes))?.build()?;
            Trainer::new(model, &train_ds, val_ds.as_ref(), tc)?
        }
    };
    // a resumed run continues the same configuration
    trainer.config_hash = cfg.hash_excluding(sections, &["train.resume"]);
    let log = train::train(&mut trainer, Some(&cfg.out))?;
    match log.last() {
        Some(m) => println!(
            "epoch {}: train loss {:.4} top1 {:.4}{}",
            m.epoch,
            m.train.loss,
            m.train.top1,
            m.val.map(|v| format!(", val loss {:.4} top1 {:.4}", v.loss, v.top1)).unwrap_or_default()
        ),
        None => println!("no records: all {} epochs already complete", trainer.config.epochs),
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (model, whiten) = load_model(cfg)?;
    let ds = analysis_data(cfg)?;
    if ds.is_empty() {
        println!("no records: dataset is empty");
        return tsv::write(cfg.out.join("eval.tsv"), &["images", "loss", "top1"], Vec::<Vec<String>>::new()).map_err(Into::into);
    }
    let r = train::evaluate(&model, &ds, whiten.as_ref(), cfg.get("eval.batch")?)?;
    println!("loss {:.6} top1 {:.4} over {} images", r.loss, r.top1, ds.len());
    tsv::write(
        cfg.out.join("eval.tsv"),
        &["images", "loss", "top1"],
        [vec![ds.len().to_string(), r.loss.to_string(), r.top1.to_string()]],
    )?;
    Ok(())
}

fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn cmd_rf(cfg: &RunConfig) -> Result<()> {
    let (model, _) = match cfg.path("model.checkpoint") {
        Some(_) => load_model(cfg)?,
        None => (arch(cfg, None)?.build()?, None),
    };
    let table = rf::geometry_table(&model)?;
    let row = |name: &str, g: &rf::RFGeometry| vec![name.to_string(), g.size.to_string(), g.jump.to_string(), g.c0().to_string()];
    let rows: Vec<Vec<String>> = match cfg.opt("rf.layer") {
        Some(layer) => vec![row(layer, &table[model.resolve(layer)?].geom)],
        None => table.iter().map(|l| row(&l.layer, &l.geom)).collect(),
    };
    print!("{}", tsv::render(&["layer", "r", "jump", "c0"], rows.clone()));
    tsv::write(cfg.out.join("rf.tsv"), &["layer", "r", "jump", "c0"], rows)?;

    if let Some(n) = cfg.opt("rf.neuron") {
        let layer = cfg.opt("rf.layer").ok_or_else(|| usage("--neuron needs --layer"))?;
        let (i, j) = parse_pair(n).ok_or_else(|| usage(format!("--neuron expects i,j, got `{n}`")))?;
        let (_, h, w) = model.arch().input;
        let f = rf::project(&model, layer, (i, j), (h, w))?;
        let header = ["layer", "i", "j", "top", "left", "bottom", "right", "clipped"];
        let prow = vec![vec![
            layer.to_string(),
            i.to_string(),
            j.to_string(),
            f.rect.top.to_string(),
            f.rect.left.to_string(),
            f.rect.bottom.to_string(),
            f.rect.right.to_string(),
            f.clipped.to_string(),
        ]];
        print!("{}", tsv::render(&header, prow.clone()));
        tsv::write(cfg.out.join("projection.tsv"), &header, prow)?;
    }
    Ok(())
}

fn neuron_mode(cfg: &RunConfig) -> Result<NeuronMode> {
    cfg.raw("mine.mode").parse().map_err(|e: netscope::Error| usage(e.to_string()))
}

/// Scan shared by `scan` and `meanstim`.
fn mine_records(cfg: &RunConfig) -> Result<(Dataset, Vec<Vec<StimulusRecord>>, (usize, usize))> {
    let (model, whiten) = load_model(cfg)?;
    let ds = analysis_data(cfg)?;
    let channels = cfg.list::<usize>("mine.channels")?;
    let recs = mine::scan(
        &model,
        &ds,
        cfg.raw("mine.layer"),
        channels.as_deref(),
        neuron_mode(cfg)?,
        whiten.as_ref(),
        cfg.get("mine.batch")?,
    )?;
    let (_, h, w) = model.arch().input;
    Ok((ds, recs, (h, w)))
}

/// Un-whitened network input for each image id.
fn image_lookup(ds: &Dataset, hw: (usize, usize)) -> impl FnMut(&str) -> netscope::Result<netscope::Tensor<f32>> + '_ {
    let index: HashMap<&str, usize> = ds.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    move |id| {
        let i = *index
            .get(id)
            .ok_or_else(|| netscope::Error::Data(format!("image `{id}` not in dataset")))?;
        eval_input(ds, i, hw, None)
    }
}

fn cmd_scan(cfg: &RunConfig) -> Result<()> {
    let (ds, recs, hw) = mine_records(cfg)?;
    let k: usize = cfg.get("mine.topk")?;
    let scale: usize = cfg.get("mine.scale")?;
    let all: Vec<StimulusRecord> = recs.iter().flatten().cloned().collect();
    mine::write_records(cfg.out.join("records.tsv"), &all)?;
    if all.is_empty() {
        println!("no records: dataset is empty");
        mine::write_records(cfg.out.join("topk.tsv"), &[])?;
        return Ok(());
    }
    let mut image_of = image_lookup(&ds, hw);
    let mut top_all = Vec::new();
    for rs in &recs {
        let top = mine::topk(rs, k);
        let channel = top[0].channel;
        if top.iter().all(|r| r.activation <= 0.0) {
            println!("channel {channel}: no positive activation in the top {k}");
        }
        let tiles = top
            .iter()
            .map(|r| mine::record_tile(r, &image_of(&r.image_id)?))
            .collect::<netscope::Result<Vec<RgbImage>>>()?;
        mine::export_grid(&tiles, cfg.out.join(format!("grid_c{channel:03}.ppm")), scale)?;
        top_all.extend(top);
    }
    mine::write_records(cfg.out.join("topk.tsv"), &top_all)?;
    println!("{} channels, {} images, top {k} per channel", recs.len(), ds.len());
    Ok(())
}

fn cmd_meanstim(cfg: &RunConfig) -> Result<()> {
    let (ds, recs, hw) = mine_records(cfg)?;
    let scale: usize = cfg.get("mine.scale")?;
    let header = ["channel", "support", "clipped_excluded", "inactive_on_dataset"];
    if ds.is_empty() {
        println!("no records: dataset is empty");
        tsv::write(cfg.out.join("meanstim.tsv"), &header, Vec::<Vec<String>>::new())?;
        return Ok(());
    }
    let mut image_of = image_lookup(&ds, hw);
    let mut rows = Vec::new();
    let mut tiles = Vec::new();
    let mut empty = 0;
    for rs in &recs {
        let channel = rs[0].channel;
        let full = rs[0].full;
        let ms = mine::mean_preferred(rs, &mut image_of)?;
        rows.push(vec![
            channel.to_string(),
            ms.support.to_string(),
            ms.clipped_excluded.to_string(),
            (ms.inactive_on_dataset as u8).to_string(),
        ]);
        match &ms.mean {
            Some(mean) => {
                let tile = mine::mean_tile(mean);
                tile.upscale(scale).save(cfg.out.join(format!("mean_c{channel:03}.ppm")))?;
                tiles.push(tile);
            }
            None => {
                empty += 1;
                if ms.inactive_on_dataset {
                    println!("no records: channel {channel} has N = 0");
                } else {
                    println!("no records: channel {channel} has only clipped positive fields");
                }
                tiles.push(RgbImage::new(full.width(), full.height(), [128; 3]));
            }
        }
    }
    tsv::write(cfg.out.join("meanstim.tsv"), &header, rows)?;
    mine::export_grid(&tiles, cfg.out.join("means.ppm"), scale)?;
    println!("{} channels, {} without a mean image", recs.len(), empty);
    Ok(())
}

fn cmd_vfilter(cfg: &RunConfig) -> Result<()> {
    let (model, _) = load_model(cfg)?;
    let order = parse_with(cfg, "vfilter.order", |s| match s {
        "signed" => Some(CouplingOrder::Signed),
        "magnitude" => Some(CouplingOrder::Magnitude),
        _ => None,
    })?;
    let w1 = model.conv_weights(model.resolve_conv(cfg.raw("vfilter.w1"))?).expect("conv");
    let w2 = model.conv_weights(model.resolve_conv(cfg.raw("vfilter.w2"))?).expect("conv");
    let channels = match cfg.list::<usize>("vfilter.channels")? {
        Some(c) => c,
        None => (0..w2.out_channels()).collect(),
    };
    let scale: usize = cfg.get("vfilter.scale")?;
    let mut tiles = Vec::new();
    for p in channels {
        let vf = vfilter::virtual_filter_with(w1, w2, p, order)?;
        vfilter::export_vfilter_report(&vf, w1, &cfg.out, &format!("vfilter_c{p:03}"), scale)?;
        tiles.push(vfilter::filter_image(&vf.filter, scale));
    }
    if tiles.is_empty() {
        println!("no records: no channels selected");
        return Ok(());
    }
    ppm::grid(&tiles, ppm::grid_cols(tiles.len())).save(cfg.out.join("vfilters.ppm"))?;
    println!("{} virtual filters of {} through {}", tiles.len(), cfg.raw("vfilter.w2"), cfg.raw("vfilter.w1"));
    Ok(())
}

fn run_actmax<T: Scalar>(cfg: &RunConfig, model: &ModelGraph<T>, whiten: Option<&WhitenStats>) -> Result<()> {
    let layer = cfg.raw("actmax.layer");
    let mode: ActMode = cfg.raw("actmax.mode").parse().map_err(|e: netscope::Error| usage(e.to_string()))?;
    let idx = model.resolve(layer)?;
    let width = model.shapes(model.input_shape(1))?[idx].c;
    let channels = match cfg.list::<usize>("actmax.channels")? {
        Some(c) => c,
        None => (0..width).collect(),
    };
    let scale: usize = cfg.get("actmax.scale")?;
    let mut rows = Vec::new();
    let mut increased = 0;
    for &c in &channels {
        let mut ac = ActMaxConfig::new(layer, c, mode);
        ac.steps = cfg.get("actmax.steps")?;
        ac.lr = cfg.get("actmax.lr")?;
        ac.weight_decay = cfg.get("actmax.weight_decay")?;
        ac.validate().map_err(|e| usage(e.to_string()))?;
        let res = actmax::adam_ascent(model, &ac)?;
        let crop = match mode {
            ActMode::NeuronCenter => Some(actmax::center_field(model, &ac)?),
            ActMode::ChannelMean => None,
        };
        actmax::export_actmax(
            &res,
            whiten,
            crop.as_ref(),
            cfg.out.join(format!("actmax_c{c:03}.ppm")),
            cfg.out.join(format!("actmax_c{c:03}.tsv")),
            scale,
        )?;
        let up = res.final_activation > res.initial_activation();
        increased += up as usize;
        rows.push(vec![
            c.to_string(),
            res.initial_activation().to_string(),
            res.final_activation.to_string(),
            (up as u8).to_string(),
        ]);
    }
    tsv::write(cfg.out.join("actmax.tsv"), &["channel", "initial", "final", "increased"], rows)?;
    if channels.is_empty() {
        println!("no records: no channels selected");
    } else {
        println!("{increased} of {} channels increased their activation", channels.len());
    }
    Ok(())
}

fn cmd_actmax(cfg: &RunConfig) -> Result<()> {
    let (model, whiten) = load_model(cfg)?;
    match cfg.raw("run.precision") {
        "f32" => run_actmax(cfg, &model, whiten.as_ref()),
        "f64" => run_actmax(cfg, &model.cast::<f64>(), whiten.as_ref()),
        other => Err(usage(format!("unknown run.precision `{other}` (expected f32 or f64)"))),
    }
}

fn write_report(cfg: &RunConfig, report: &InactiveReport) -> Result<()> {
    probe::write_inactive(cfg.out.join("inactive.tsv"), report)?;
    let path = cfg.out.join("inactive.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_inactive(cfg: &RunConfig) -> Result<()> {
    let (model, whiten) = load_model(cfg)?;
    let ds = analysis_data(cfg)?;
    let layer = cfg.raw("probe.layer");
    if ds.is_empty() {
        println!("no records: dataset is empty");
        return tsv::write(cfg.out.join("inactive.tsv"), &probe::INACTIVE_HEADER, Vec::<Vec<String>>::new()).map_err(Into::into);
    }
    let report = probe::find_inactive(&model, &ds, layer, whiten.as_ref(), cfg.get("probe.batch")?)?;
    write_report(cfg, &report)?;
    if report.inactive.is_empty() {
        println!("no records: no inactive channels in {layer}");
    } else {
        println!("{} of {} channels inactive in {layer}", report.inactive.len(), report.max_activation.len());
    }
    Ok(())
}

const NOISE_HEADER: [&str; 8] = ["layer", "mode", "seed", "inactive", "clean_loss", "noised_loss", "delta", "batch_channels"];

fn cmd_noise(cfg: &RunConfig) -> Result<()> {
    let (model, whiten) = load_model(cfg)?;
    let ds = analysis_data(cfg)?;
    let mode: NoiseMode = cfg.raw("noise.mode").parse().map_err(|e: netscope::Error| usage(e.to_string()))?;
    let batch: usize = cfg.get("probe.batch")?;
    let path = cfg.out.join("noise.tsv");
    if ds.is_empty() {
        println!("no records: dataset is empty");
        return tsv::write(path, &NOISE_HEADER, Vec::<Vec<String>>::new()).map_err(Into::into);
    }
    let report: InactiveReport = match cfg.path("noise.report") {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let r: InactiveReport =
                serde_json::from_str(&text).map_err(|e| DataError(format!("{}: {e}", p.display())))?;
            if r.dataset != ds.fingerprint() {
                warn!("report {} was computed on a different dataset", p.display());
            }
            r
        }
        None => probe::find_inactive(&model, &ds, cfg.raw("probe.layer"), whiten.as_ref(), batch)?,
    };
    if report.inactive.is_empty() {
        println!("no records: no inactive channels in {}", report.layer);
        if mode == NoiseMode::RandomOne {
            return tsv::write(path, &NOISE_HEADER, Vec::<Vec<String>>::new()).map_err(Into::into);
        }
    }
    let r = probe::eval_noised(&model, &ds, &report, mode, cfg.seed()?, whiten.as_ref(), batch)?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    tsv::write(
        path,
        &NOISE_HEADER,
        [vec![
            report.layer.clone(),
            cfg.raw("noise.mode").to_string(),
            r.seed.to_string(),
            join(&report.inactive),
            r.clean_loss.to_string(),
            r.noised_loss.to_string(),
            r.delta.to_string(),
            join(&r.batch_channels),
        ]],
    )?;
    println!("clean loss {:.6}, noised loss {:.6}, delta {:e}", r.clean_loss, r.noised_loss, r.delta);
    Ok(())
}

fn cmd_export(cfg: &RunConfig) -> Result<()> {
    match cfg.raw("export.to") {
        "raw" => {
            let p = cfg.path("model.checkpoint").ok_or_else(|| usage("export to raw needs --checkpoint"))?;
            let ck = Checkpoint::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            ck.export_raw(cfg.out.join("model.json"), cfg.out.join("model.bin"))?;
            println!("{} tensors exported", ck.tensors.len());
        }
        "nsck" => {
            let m = cfg.path("export.manifest").ok_or_else(|| usage("export to nsck needs --manifest"))?;
            let b = cfg.path("export.blob").ok_or_else(|| usage("export to nsck needs --blob"))?;
            let ck = import_raw(&m, &b)?;
            ck.to_model::<f32>()?;
            ck.save(cfg.out.join("model.nsck"))?;
            println!("{} tensors imported", ck.tensors.len());
        }
        other => return Err(usage(format!("unknown export.to `{other}` (expected raw or nsck)"))),
    }
    Ok(())
}
