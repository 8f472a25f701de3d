use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use latlm_core::data::{
    build_vocab, default_templates, generate_confusion_lattice, manifest_value, read_labels,
    read_lattices, template_tokens, write_labels, write_lattices, write_manifest, ConfusionModel,
    SplitSizes,
};
use latlm_core::data::make_synthetic_task;
use latlm_core::lattice::LatticeError;
use latlm_core::model::{LmConfig, ModelError};
use latlm_core::model::init_lm_params;
use latlm_core::numerics::{grad_check, NumericsError, Tape};
use latlm_core::pipeline::{
    classifier_config_for, evaluate, lattice_lm_loss, lattice_perplexity, pretrain_stage1,
    pretrain_stage2, train_classifier, Checkpoint, LabeledExample, PipelineError, Stage,
    TrainConfig, TrainLog,
};
use latlm_core::Lattice;

use crate::config::FileConfig;
use crate::errors::{io_error, CliError};
use crate::opts::{
    Cli, Command, DimArgs, EvalArgs, GenDataArgs, GradcheckArgs, InspectLatticeArgs,
    PerplexityArgs, PretrainLatticeArgs, PretrainSeqArgs, TrainArgs, TrainClfArgs,
};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::PretrainSeq(args) => pretrain_seq(args),
        Command::PretrainLattice(args) => pretrain_lattice(args),
        Command::TrainClf(args) => train_clf(args),
        Command::Eval(args) => eval(args),
        Command::Perplexity(args) => perplexity(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::InspectLattice(args) => inspect_lattice(args),
    }
}

fn row(key: impl Into<String>, value: impl Display) -> (String, String) {
    (key.into(), value.to_string())
}

/// Resolves the output directory (flag, config file, $LATLM_OUT_DIR, ".")
/// and creates it.
fn out_dir(flag: Option<PathBuf>, file: &mut FileConfig) -> Result<PathBuf, CliError> {
    let dir = match flag.or(file.get::<PathBuf>("out_dir")?) {
        Some(dir) => dir,
        None => std::env::var_os("LATLM_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, &e))?;
    Ok(dir)
}

fn required_path(
    flag: Option<PathBuf>,
    file: &mut FileConfig,
    key: &str,
) -> Result<PathBuf, CliError> {
    flag.or(file.get::<PathBuf>(key)?).ok_or_else(|| {
        CliError::Usage(format!(
            "missing --{} (or {key}= in the config file)",
            key.replace('_', "-")
        ))
    })
}

fn train_config(
    args: &TrainArgs,
    file: &mut FileConfig,
    defaults: TrainConfig,
) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig {
        lr: args.lr.or(file.get("lr")?).unwrap_or(defaults.lr),
        epochs: args.epochs.or(file.get("epochs")?).unwrap_or(defaults.epochs),
        batch_size: args.batch_size.or(file.get("batch_size")?).unwrap_or(defaults.batch_size),
        seed: args.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
        patience: args.patience.or(file.get("patience")?).unwrap_or(defaults.patience),
    })
}

fn dims(
    args: &DimArgs,
    file: &mut FileConfig,
    defaults: (usize, usize, usize),
) -> Result<(usize, usize, usize), CliError> {
    Ok((
        args.embed_dim.or(file.get("embed_dim")?).unwrap_or(defaults.0),
        args.hidden_dim.or(file.get("hidden_dim")?).unwrap_or(defaults.1),
        args.layers.or(file.get("layers")?).unwrap_or(defaults.2),
    ))
}

fn train_config_rows(rows: &mut Vec<(String, String)>, tc: &TrainConfig) {
    rows.push(row("lr", tc.lr));
    rows.push(row("epochs", tc.epochs));
    rows.push(row("batch_size", tc.batch_size));
    rows.push(row("seed", tc.seed));
    rows.push(row("patience", tc.patience));
}

/// Per-epoch metric rows for the run log, echoed to stderr as progress.
fn epoch_rows(rows: &mut Vec<(String, String)>, log: &TrainLog, metric: &str) {
    rows.push(row(format!("result_initial_{metric}"), log.initial_metric));
    for e in &log.epochs {
        rows.push(row(format!("metric_epoch{}_train_loss", e.epoch), e.train_loss));
        rows.push(row(format!("metric_epoch{}_{metric}", e.epoch), e.valid_metric));
        eprintln!("epoch {}: train_loss={} {metric}={}", e.epoch, e.train_loss, e.valid_metric);
    }
    rows.push(row("result_best_epoch", log.best_epoch));
}

fn write_log(dir: &Path, command: &str, rows: &[(String, String)]) -> Result<(), CliError> {
    write_manifest(dir.join(format!("{command}.log")), rows)?;
    Ok(())
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, &e))?;
    let sentences: Vec<Vec<String>> = text
        .lines()
        .map(|line| line.split_whitespace().map(String::from).collect::<Vec<String>>())
        .filter(|tokens| !tokens.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(CliError::Data(format!("{}: no sentences", path.display())));
    }
    Ok(sentences)
}

/// Joins a lattice file with a label file by lattice id.
fn labeled_examples(
    lattice_path: &Path,
    labels_path: &Path,
) -> Result<Vec<LabeledExample>, CliError> {
    let lattices = read_lattices(lattice_path)?;
    let rows = read_labels(labels_path)?;
    let by_id: HashMap<&str, &str> =
        rows.iter().map(|(id, label)| (id.as_str(), label.as_str())).collect();
    lattices
        .into_iter()
        .map(|lattice| {
            let label = by_id.get(lattice.id.as_str()).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: no label for lattice {:?}",
                    labels_path.display(),
                    lattice.id
                ))
            })?;
            Ok(LabeledExample { lattice, label: (*label).to_string() })
        })
        .collect()
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let seed: u64 = args.seed.or(file.get("seed")?).unwrap_or(42);
    let train_per_label: usize = args.train_per_label.or(file.get("train_per_label")?).unwrap_or(30);
    let valid_per_label: usize = args.valid_per_label.or(file.get("valid_per_label")?).unwrap_or(10);
    let test_per_label: usize = args.test_per_label.or(file.get("test_per_label")?).unwrap_or(10);

    let templates = default_templates();
    let mut model = ConfusionModel::new(template_tokens(&templates));
    model.substitution_rate =
        args.substitution_rate.or(file.get("substitution_rate")?).unwrap_or(model.substitution_rate);
    model.branches = args.branches.or(file.get("branches")?).unwrap_or(model.branches);
    model.deletion_rate =
        args.deletion_rate.or(file.get("deletion_rate")?).unwrap_or(model.deletion_rate);
    model.concentration =
        args.concentration.or(file.get("concentration")?).unwrap_or(model.concentration);
    file.finish()?;

    let sizes = SplitSizes::new(train_per_label, valid_per_label, test_per_label);
    let task = make_synthetic_task(&templates, sizes, &model, seed)?;

    let mut rows = vec![
        row("command", "gen-data"),
        row("out_dir", dir.display()),
        row("seed", seed),
        row("train_per_label", train_per_label),
        row("valid_per_label", valid_per_label),
        row("test_per_label", test_per_label),
        row("substitution_rate", model.substitution_rate),
        row("branches", model.branches),
        row("deletion_rate", model.deletion_rate),
        row("concentration", model.concentration),
    ];

    for (name, examples) in task.splits() {
        let lattices: Vec<Lattice> = examples.iter().map(|e| e.lattice.clone()).collect();
        write_lattices(dir.join(format!("{name}.lattices")), &lattices)?;

        // One-best chains carry the same ids, so the label files apply to both.
        let one_best: Vec<Lattice> = examples
            .iter()
            .map(|e| Lattice::from_tokens(e.lattice.id.clone(), &e.one_best))
            .collect::<Result<_, _>>()?;
        write_lattices(dir.join(format!("{name}.onebest.lattices")), &one_best)?;

        let labels: Vec<(String, String)> =
            examples.iter().map(|e| (e.lattice.id.clone(), e.label.clone())).collect();
        write_labels(dir.join(format!("{name}.labels")), &labels)?;

        let text_path = dir.join(format!("{name}.txt"));
        let text: String = examples.iter().map(|e| e.clean.join(" ") + "\n").collect();
        fs::write(&text_path, text).map_err(|e| io_error(&text_path, &e))?;

        rows.push(row(format!("result_{name}_examples"), examples.len()));
    }

    write_manifest(dir.join("manifest.txt"), &task.manifest)?;
    for (key, value) in &task.manifest {
        rows.push(row(format!("result_{key}"), value));
    }
    write_log(&dir, "gen-data", &rows)?;

    let wer = manifest_value(&task.manifest, "one_best_wer").unwrap_or("nan");
    println!("one_best_wer={wer}");
    Ok(())
}

fn pretrain_seq(args: PretrainSeqArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let train_path = required_path(args.train, &mut file, "train")?;
    let valid_path = required_path(args.valid, &mut file, "valid")?;
    let lattices_path: Option<PathBuf> = args.lattices.or(file.get("lattices")?);
    let min_count: u64 = args.min_count.or(file.get("min_count")?).unwrap_or(1);
    let (embed_dim, hidden_dim, layers) = dims(&args.dims, &mut file, (128, 256, 2))?;
    let tc = train_config(&args.train_args, &mut file, TrainConfig::lm_defaults())?;
    file.finish()?;

    let train = read_sentences(&train_path)?;
    let valid = read_sentences(&valid_path)?;
    let extra = match &lattices_path {
        Some(path) => read_lattices(path)?,
        None => Vec::new(),
    };
    let lines: Vec<String> = train.iter().map(|s| s.join(" ")).collect();
    let vocab = build_vocab(&lines, &extra, min_count)?;
    let config = LmConfig { vocab_size: vocab.len(), embed_dim, hidden_dim, layers, decoder_bias: true };

    let outcome = pretrain_stage1(&train, &valid, &vocab, &config, &tc)?;
    let ckpt_path = dir.join("seq-lm.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;

    let mut rows = vec![
        row("command", "pretrain-seq"),
        row("out_dir", dir.display()),
        row("train", train_path.display()),
        row("valid", valid_path.display()),
    ];
    if let Some(path) = &lattices_path {
        rows.push(row("lattices", path.display()));
    }
    rows.push(row("min_count", min_count));
    rows.push(row("embed_dim", embed_dim));
    rows.push(row("hidden_dim", hidden_dim));
    rows.push(row("layers", layers));
    train_config_rows(&mut rows, &tc);
    rows.push(row("result_vocab", vocab.len()));
    rows.push(row("result_checkpoint", ckpt_path.display()));
    epoch_rows(&mut rows, &outcome.log, "perplexity");
    rows.push(row("result_perplexity", outcome.log.best_metric));
    write_log(&dir, "pretrain-seq", &rows)?;

    println!("perplexity={}", outcome.log.best_metric);
    Ok(())
}

fn pretrain_lattice(args: PretrainLatticeArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let train_path = required_path(args.train, &mut file, "train")?;
    let valid_path = required_path(args.valid, &mut file, "valid")?;
    let ckpt_in = required_path(args.checkpoint, &mut file, "checkpoint")?;
    let tc = train_config(&args.train_args, &mut file, TrainConfig::lm_defaults())?;
    file.finish()?;

    let train = read_lattices(&train_path)?;
    let valid = read_lattices(&valid_path)?;
    let stage1 = Checkpoint::load(&ckpt_in)?;

    let outcome = pretrain_stage2(&train, &valid, &stage1, &tc)?;
    let ckpt_path = dir.join("lattice-lm.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;

    let mut rows = vec![
        row("command", "pretrain-lattice"),
        row("out_dir", dir.display()),
        row("train", train_path.display()),
        row("valid", valid_path.display()),
        row("checkpoint", ckpt_in.display()),
    ];
    train_config_rows(&mut rows, &tc);
    rows.push(row("result_checkpoint", ckpt_path.display()));
    epoch_rows(&mut rows, &outcome.log, "perplexity");
    rows.push(row("result_perplexity", outcome.log.best_metric));
    write_log(&dir, "pretrain-lattice", &rows)?;

    println!("perplexity={}", outcome.log.best_metric);
    Ok(())
}

fn train_clf(args: TrainClfArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let train_path = required_path(args.train, &mut file, "train")?;
    let train_labels = required_path(args.train_labels, &mut file, "train_labels")?;
    let valid_path = required_path(args.valid, &mut file, "valid")?;
    let valid_labels = required_path(args.valid_labels, &mut file, "valid_labels")?;
    let ckpt_in = required_path(args.checkpoint, &mut file, "checkpoint")?;
    let clf_hidden: usize = args.clf_hidden.or(file.get("clf_hidden")?).unwrap_or(300);
    let clf_layers: usize = args.clf_layers.or(file.get("clf_layers")?).unwrap_or(2);
    let dropout: f64 = args.dropout.or(file.get("dropout")?).unwrap_or(0.0);
    let tc = train_config(&args.train_args, &mut file, TrainConfig::classifier_defaults())?;
    file.finish()?;

    let train = labeled_examples(&train_path, &train_labels)?;
    let valid = labeled_examples(&valid_path, &valid_labels)?;
    let lm = Checkpoint::load(&ckpt_in)?;

    let label_count = {
        let mut labels: Vec<&str> = train.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    };
    let clf_config =
        classifier_config_for(&lm.lm_config()?, label_count, clf_hidden, clf_layers, dropout);

    let outcome = train_classifier(&train, &valid, &lm, &clf_config, &tc)?;
    let ckpt_path = dir.join("classifier.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;

    let mut rows = vec![
        row("command", "train-clf"),
        row("out_dir", dir.display()),
        row("train", train_path.display()),
        row("train_labels", train_labels.display()),
        row("valid", valid_path.display()),
        row("valid_labels", valid_labels.display()),
        row("checkpoint", ckpt_in.display()),
        row("clf_hidden", clf_hidden),
        row("clf_layers", clf_layers),
        row("dropout", dropout),
    ];
    train_config_rows(&mut rows, &tc);
    rows.push(row("result_labels", label_count));
    rows.push(row("result_checkpoint", ckpt_path.display()));
    epoch_rows(&mut rows, &outcome.log, "accuracy");
    rows.push(row("result_accuracy", outcome.log.best_metric));
    write_log(&dir, "train-clf", &rows)?;

    println!("accuracy={}", outcome.log.best_metric);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let lattice_path = required_path(args.lattices, &mut file, "lattices")?;
    let labels_path = required_path(args.labels, &mut file, "labels")?;
    let ckpt_in = required_path(args.checkpoint, &mut file, "checkpoint")?;
    file.finish()?;

    let examples = labeled_examples(&lattice_path, &labels_path)?;
    let clf = Checkpoint::load(&ckpt_in)?;
    let result = evaluate(&clf, &examples)?;

    let mut rows = vec![
        row("command", "eval"),
        row("out_dir", dir.display()),
        row("lattices", lattice_path.display()),
        row("labels", labels_path.display()),
        row("checkpoint", ckpt_in.display()),
        row("result_examples", result.predictions.len()),
        row("result_labels", result.labels.join(",")),
    ];
    for (gold, row_counts) in result.confusion.iter().enumerate() {
        for (predicted, count) in row_counts.iter().enumerate() {
            rows.push(row(
                format!("result_confusion_{}_{}", result.labels[gold], result.labels[predicted]),
                count,
            ));
        }
    }
    rows.push(row("result_accuracy", result.accuracy));
    write_log(&dir, "eval", &rows)?;

    println!("accuracy={}", result.accuracy);
    Ok(())
}

fn perplexity(args: PerplexityArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let lattice_path = required_path(args.lattices, &mut file, "lattices")?;
    let ckpt_in = required_path(args.checkpoint, &mut file, "checkpoint")?;
    file.finish()?;

    let ckpt = Checkpoint::load(&ckpt_in)?;
    if matches!(ckpt.stage, Stage::Classifier) {
        return Err(PipelineError::StageMismatch {
            expected: "seq-lm or lattice-lm",
            got: ckpt.stage.tag(),
        }
        .into());
    }
    let config = ckpt.lm_config()?;
    let lattices = read_lattices(&lattice_path)?;
    let report = lattice_perplexity(&ckpt.params, &config, &lattices, &ckpt.vocab)?;

    let rows = vec![
        row("command", "perplexity"),
        row("out_dir", dir.display()),
        row("lattices", lattice_path.display()),
        row("checkpoint", ckpt_in.display()),
        row("result_events", report.events),
        row("result_forward_perplexity", report.forward),
        row("result_backward_perplexity", report.backward),
        row("result_perplexity", report.combined),
    ];
    write_log(&dir, "perplexity", &rows)?;

    println!("perplexity={}", report.combined);
    Ok(())
}

/// Structural errors surface before the sweep (the config is validated and
/// the loss is pure in the parameter values), so anything the sweep itself
/// raises is numeric.
fn numerics_only(err: PipelineError) -> NumericsError {
    match err {
        PipelineError::Numerics(inner) => inner,
        PipelineError::Model(ModelError::Numerics(inner)) => inner,
        _ => NumericsError::NonFinite { context: "loss evaluation" },
    }
}

fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.common.config.as_deref())?;
    let dir = out_dir(args.common.out_dir, &mut file)?;
    let seed: u64 = args.seed.or(file.get("seed")?).unwrap_or(42);
    let (embed_dim, hidden_dim, layers) = dims(&args.dims, &mut file, (4, 4, 1))?;
    // Step 1e-4 balances truncation against cancellation for losses of this
    // scale; the tolerance matches it.
    let step: f64 = args.step.or(file.get("step")?).unwrap_or(1e-4);
    let samples: usize = args.samples.or(file.get("samples")?).unwrap_or(4);
    let tolerance: f64 = args.tolerance.or(file.get("tolerance")?).unwrap_or(1e-4);
    file.finish()?;

    let pool: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let sentence: Vec<String> = pool[0..4].to_vec();
    let mut model = ConfusionModel::new(pool.clone());
    model.substitution_rate = 0.5;
    model.branches = 2;
    model.deletion_rate = 0.2;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let lattice = generate_confusion_lattice("gradcheck", &sentence, &model, &mut rng)?;
    let vocab = build_vocab(&[pool.join(" ")], &[lattice.clone()], 1)?;
    let config = LmConfig { vocab_size: vocab.len(), embed_dim, hidden_dim, layers, decoder_bias: true };
    config.validate().map_err(PipelineError::from)?;
    let mut params = init_lm_params(&config, &mut rng).map_err(PipelineError::from)?;

    let report = grad_check(
        &mut params,
        |p| {
            let mut tape = Tape::new();
            let out = lattice_lm_loss(&mut tape, p, &config, &lattice, &vocab)
                .map_err(numerics_only)?;
            let grads = tape.backward(out.loss)?;
            Ok((tape.value(out.loss).item(), grads))
        },
        step,
        samples,
        seed,
    )
    .map_err(PipelineError::from)?;

    let mut rows = vec![
        row("command", "gradcheck"),
        row("out_dir", dir.display()),
        row("seed", seed),
        row("embed_dim", embed_dim),
        row("hidden_dim", hidden_dim),
        row("layers", layers),
        row("step", step),
        row("samples", samples),
        row("tolerance", tolerance),
        row("result_coords_checked", report.coords_checked),
    ];
    if let Some((name, coord)) = &report.worst {
        rows.push(row("result_worst", format!("{name}[{coord}]")));
    }
    rows.push(row("result_max_rel_err", report.max_rel_err));
    write_log(&dir, "gradcheck", &rows)?;

    println!("max_rel_err={}", report.max_rel_err);
    if report.max_rel_err > tolerance {
        return Err(CliError::Model(format!(
            "gradient check failed: max_rel_err={} exceeds tolerance={tolerance}",
            report.max_rel_err
        )));
    }
    Ok(())
}

fn inspect_lattice(args: InspectLatticeArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let lattice_path = required_path(args.lattices, &mut file, "lattices")?;
    let id: Option<String> = args.id.or(file.get("id")?);
    let max_paths: usize = args.max_paths.or(file.get("max_paths")?).unwrap_or(10_000);
    file.finish()?;

    let lattices = read_lattices(&lattice_path)?;
    let selected: Vec<&Lattice> = match &id {
        Some(id) => {
            let hits: Vec<&Lattice> = lattices.iter().filter(|l| &l.id == id).collect();
            if hits.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: no lattice with id {id:?}",
                    lattice_path.display()
                )));
            }
            hits
        }
        None => lattices.iter().collect(),
    };

    for lattice in &selected {
        let (paths, mass) = match lattice.enumerate_paths(max_paths) {
            Ok(set) => (set.len().to_string(), format!("{:.6}", set.total_probability())),
            Err(LatticeError::TooManyPaths { limit }) => (format!(">{limit}"), "n/a".to_string()),
            Err(other) => return Err(other.into()),
        };
        let one_best = lattice.one_best_path()?.join(" ");
        println!(
            "{}: nodes={} transitions={} paths={} path_mass={} one_best={:?}",
            lattice.id,
            lattice.num_nodes,
            lattice.transitions.len(),
            paths,
            mass,
            one_best
        );
    }
    println!("lattices={}", selected.len());
    Ok(())
}
