use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regseg_core::dataset::{self, Dataset};
use regseg_core::metrics::{self, ConfusionMatrix};
use regseg_core::trainer::{self, EpochRecord, TrainOutput};
use regseg_core::{
    checkpoint, models, netpbm, synth, Error, FusionMode, LossMode, ModelConfig, ModelState,
    ProposalConfig, Result, SceneSpec, SoftmaxOrder,
};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Predict(args) => predict(args),
        Command::Ablate(args) => ablate(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SceneSpec {
        width: args.width,
        height: args.height,
        num_classes: args.classes,
        exponent: args.exponent,
        objects_min: args.objects_min,
        objects_max: args.objects_max,
        background_class: 0,
        color_jitter: 0.05,
        pixel_noise: 0.03,
        seed: args.seed,
    };
    dataset::generate_dataset(&args.out, &spec, args.train_count, args.test_count, args.force)?;
    println!(
        "wrote {} train + {} test images to {}",
        args.train_count,
        args.test_count,
        args.out.display()
    );
    Ok(())
}

fn write_run_config(path: &Path, sections: &[Vec<(String, String)>]) -> Result<()> {
    let mut text = String::new();
    for section in sections {
        for (key, value) in section {
            writeln!(text, "{} {}", key, value).expect("string write");
        }
    }
    Ok(fs::write(path, text)?)
}

fn log_text(log: &[EpochRecord]) -> String {
    let mut text = String::from("# epoch log: epoch phase loss global_acc class_avg_acc mean_iou\n");
    for record in log {
        text.push_str(&record.to_line());
        text.push('\n');
    }
    text
}

fn run_training(
    config: &ModelConfig,
    args_train: &TrainFlags,
    args_proposal: &ProposalFlags,
    data: &Dataset,
) -> Result<TrainOutput> {
    let train_cfg = args_train.to_config();
    let proposal_cfg = args_proposal.to_config();
    trainer::train(config, &train_cfg, &proposal_cfg, data)
}

fn train(args: TrainArgs) -> Result<()> {
    let data = dataset::load_dataset(&args.data)?;
    let config = args.model.to_config(data.num_classes());
    fs::create_dir_all(&args.out)?;
    write_run_config(
        &args.out.join("run.cfg"),
        &[
            args.model.describe(&config),
            args.train.describe(),
            args.proposal.describe(),
        ],
    )?;
    let output = run_training(&config, &args.train, &args.proposal, &data)?;
    checkpoint::save(&args.out.join("checkpoint.bin"), &output.state)?;
    fs::write(args.out.join("train.log"), log_text(&output.log))?;
    if output.diverged {
        return Err(Error::NonFinite(
            "training loss diverged; last good checkpoint written".into(),
        ));
    }
    if let Some(last) = output.log.last() {
        println!("{}", last.to_line());
    }
    println!("checkpoint written to {}", args.out.join("checkpoint.bin").display());
    Ok(())
}

fn human_metrics_table(cm: &ConfusionMatrix) -> String {
    let mut text = String::new();
    writeln!(text, "{:<24} {:>10}", "metric", "value").unwrap();
    for (name, value) in [
        ("global accuracy", metrics::global_accuracy(cm)),
        ("class-average accuracy", metrics::class_average_accuracy(cm)),
        ("mean IoU", metrics::mean_iou(cm)),
    ] {
        match value {
            Ok(v) => writeln!(text, "{:<24} {:>10.4}", name, v).unwrap(),
            Err(_) => writeln!(text, "{:<24} {:>10}", name, "absent").unwrap(),
        }
    }
    text
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = dataset::load_dataset(&args.data)?;
    let state = checkpoint::load(&args.checkpoint)?;
    if state.config.num_classes != data.num_classes() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} classes but dataset has {}",
            state.config.num_classes,
            data.num_classes()
        )));
    }
    let indices = match args.split {
        SplitFlag::Train => &data.train_indices,
        SplitFlag::Test => &data.test_indices,
    };
    if indices.is_empty() {
        return Err(Error::invalid("selected split is empty"));
    }
    let proposal_cfg = args.proposal.to_config();

    let mut cm = ConfusionMatrix::new(data.num_classes());
    let mut banded = args
        .boundary_band
        .map(|_| ConfusionMatrix::new(data.num_classes()));
    let mut uncovered = 0usize;
    let mut band_empty_images = 0usize;
    for &i in indices {
        let image = &data.images[i];
        let set = trainer::eval_regions(&proposal_cfg, image, image.dim(1), image.dim(0))?;
        let prepared = models::prepare_regions(set, &state.config)?;
        let pred = models::predict(&state, image, &prepared)?;
        uncovered += pred.uncovered;
        cm.accumulate(&data.labels[i], &pred.labels)?;
        if let (Some(band), Some(bcm)) = (args.boundary_band, banded.as_mut()) {
            let mask = metrics::boundary_band(&data.labels[i], band);
            if mask.iter().all(|&m| !m) {
                band_empty_images += 1;
            } else {
                bcm.accumulate_masked(&data.labels[i], &pred.labels, &mask)?;
            }
        }
    }

    print!("{}", human_metrics_table(&cm));
    for line in metrics::report_lines(&cm, None) {
        println!("{}", line);
    }
    println!("uncovered_pixels={}", uncovered);
    if let (Some(band), Some(bcm)) = (args.boundary_band, banded) {
        if bcm.total() == 0 {
            println!("metric=boundary_class_accuracy band={} value=absent", band);
        } else {
            println!(
                "metric=boundary_class_accuracy band={} value={:.6}",
                band,
                metrics::class_average_accuracy(&bcm)?
            );
            println!(
                "metric=boundary_global_accuracy band={} value={:.6}",
                band,
                metrics::global_accuracy(&bcm)?
            );
        }
        if band_empty_images > 0 {
            println!("boundary_band_empty_images={}", band_empty_images);
        }
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut failures = 0;
    let mut report = |check: &regseg_core::verify::NamedCheck| {
        let status = if check.passed() { "pass" } else { "FAIL" };
        println!(
            "check={} max_rel_err={:.3e} checked={} skipped={} tolerance={:.0e} status={}",
            check.name,
            check.report.max_rel_err,
            check.report.checked,
            check.report.skipped,
            check.tolerance,
            status
        );
        if !check.passed() {
            failures += 1;
        }
    };
    for check in regseg_core::verify::layer_checks(args.seed)? {
        report(&check);
    }
    for check in regseg_core::verify::model_checks(args.seed, args.samples_per_param)? {
        report(&check);
    }
    if failures > 0 {
        return Err(Error::invalid(format!("{} gradient checks failed", failures)));
    }
    println!("all gradient checks passed");
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let data = dataset::load_dataset(&args.data)?;
    let state = checkpoint::load(&args.checkpoint)?;
    if state.config.num_classes != data.num_classes() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} classes but dataset has {}",
            state.config.num_classes,
            data.num_classes()
        )));
    }
    let indices = match args.split {
        SplitFlag::Train => &data.train_indices,
        SplitFlag::Test => &data.test_indices,
    };
    fs::create_dir_all(&args.out)?;
    let palette = synth::default_palette(data.num_classes());
    let proposal_cfg = args.proposal.to_config();
    let mut total_uncovered = 0usize;
    for &i in indices {
        let image = &data.images[i];
        let set = trainer::eval_regions(&proposal_cfg, image, image.dim(1), image.dim(0))?;
        let prepared = models::prepare_regions(set, &state.config)?;
        let pred = models::predict(&state, image, &prepared)?;
        total_uncovered += pred.uncovered;
        netpbm::write_pgm(&args.out.join(format!("pred_{:05}.pgm", i)), &pred.labels)?;
        let colored = synth::colorize_labels(&pred.labels, &palette)?;
        netpbm::write_ppm(&args.out.join(format!("pred_{:05}.ppm", i)), &colored)?;
    }
    println!(
        "wrote {} predictions to {} (uncovered_pixels={})",
        indices.len(),
        args.out.display(),
        total_uncovered
    );
    Ok(())
}

struct AblationRow {
    name: &'static str,
    global: f64,
    class_avg: f64,
    miou: f64,
}

fn eval_row(
    name: &'static str,
    state: &ModelState,
    data: &Dataset,
    proposal_cfg: &ProposalConfig,
) -> Result<AblationRow> {
    let (cm, _) = trainer::evaluate(state, data, &data.test_indices, proposal_cfg)?;
    Ok(AblationRow {
        name,
        global: metrics::global_accuracy(&cm)?,
        class_avg: metrics::class_average_accuracy(&cm)?,
        miou: metrics::mean_iou(&cm)?,
    })
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mut text = String::new();
    writeln!(
        text,
        "{:<28} {:>10} {:>10} {:>10}",
        "configuration", "global", "class_avg", "mean_iou"
    )
    .unwrap();
    for row in rows {
        writeln!(
            text,
            "{:<28} {:>10.4} {:>10.4} {:>10.4}",
            row.name, row.global, row.class_avg, row.miou
        )
        .unwrap();
    }
    for row in rows {
        writeln!(
            text,
            "row={} global={:.6} class_avg={:.6} mean_iou={:.6}",
            row.name, row.global, row.class_avg, row.miou
        )
        .unwrap();
    }
    text
}

fn ablate(args: AblateArgs) -> Result<()> {
    let data = dataset::load_dataset(&args.data)?;
    let classes = data.num_classes();
    fs::create_dir_all(&args.out)?;
    let train_cfg = args.train.to_config();
    let grid_cfg = args.proposal.to_config();

    // both arms share the seed and run in one process so the comparison is
    // controlled; the class-average axes compare under the balanced loss,
    // the global-accuracy comparison under the natural-frequency loss
    let loss_mode = LossMode::Balanced;
    let mut rows = Vec::new();
    match args.which {
        AblationAxis::E2eVsBaseline => {
            let mut e2e = ModelConfig::end_to_end(classes);
            e2e.fusion = FusionMode::BoxOnly;
            e2e.loss_mode = LossMode::Unbalanced;
            let out = trainer::train(&e2e, &train_cfg, &grid_cfg, &data)?;
            rows.push(eval_row("e2e-box-pixel-loss", &out.state, &data, &grid_cfg)?);

            let mut base = ModelConfig::baseline(classes);
            base.loss_mode = LossMode::Unbalanced;
            let out = trainer::train(&base, &train_cfg, &grid_cfg, &data)?;
            rows.push(eval_row("baseline-region-loss", &out.state, &data, &grid_cfg)?);
        }
        AblationAxis::SoftmaxOrder => {
            for (name, order) in [
                ("max-then-softmax", SoftmaxOrder::MaxThenSoftmax),
                ("softmax-then-max", SoftmaxOrder::SoftmaxThenMax),
            ] {
                let mut config = ModelConfig::end_to_end(classes);
                config.loss_mode = loss_mode;
                config.softmax_order = order;
                let out = trainer::train(&config, &train_cfg, &grid_cfg, &data)?;
                rows.push(eval_row(name, &out.state, &data, &grid_cfg)?);
            }
        }
        AblationAxis::RegionShape => {
            let mut config = ModelConfig::end_to_end(classes);
            config.loss_mode = loss_mode;
            let out = trainer::train(&config, &train_cfg, &grid_cfg, &data)?;
            rows.push(eval_row("multi-scale-overlapping", &out.state, &data, &grid_cfg)?);

            let overseg_cfg = ProposalConfig::Oversegmentation(regseg_core::trainer::OversegParams {
                merge_threshold: args.proposal.merge_threshold,
                min_region_size: args.proposal.min_region_size,
            });
            let out = trainer::train(&config, &train_cfg, &overseg_cfg, &data)?;
            rows.push(eval_row("non-overlapping-overseg", &out.state, &data, &overseg_cfg)?);
        }
        AblationAxis::PoolingMode => {
            for (name, fusion) in [
                ("bounding-box", FusionMode::BoxOnly),
                ("region", FusionMode::RegionOnly),
                ("region+box-tied", FusionMode::Tied),
                ("region+box-separate", FusionMode::Separate),
            ] {
                let mut config = ModelConfig::end_to_end(classes);
                config.loss_mode = loss_mode;
                config.fusion = fusion;
                let out = trainer::train(&config, &train_cfg, &grid_cfg, &data)?;
                rows.push(eval_row(name, &out.state, &data, &grid_cfg)?);
            }
        }
    }

    let table = ablation_table(&rows);
    print!("{}", table);
    fs::write(args.out.join("ablate.txt"), table)?;
    write_run_config(
        &args.out.join("run.cfg"),
        &[args.train.describe(), args.proposal.describe()],
    )?;
    Ok(())
}
