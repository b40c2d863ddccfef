use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use wsod::eval::Interpolation;
use wsod::pipeline::coco::import_coco;
use wsod::pipeline::*;
use wsod::textclf::{examples_from_records, load_corpus, train_text_classifier, CorpusRecord, LabelPrReport, TextClfConfig};
use wsod::{tokenize, CategoryVocabulary, EmbeddingTable, TextClassifier};

mod config;

use config::{layered_config, ConfigArgs};

#[derive(Parser)]
#[command(name = "wsod", version, about = "Weakly supervised detection from image captions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic captioned dataset with proposals and features.
    MakeSynthetic(MakeSynthetic),
    /// Convert COCO caption and instance files into a caption corpus.
    ImportCoco(ImportCoco),
    /// Train the caption-to-label text classifier.
    TrainTextclf(TrainTextclf),
    /// Turn manifest captions into image-level labels.
    InferLabels(InferLabels),
    /// Label precision and recall against gold labels.
    EvalLabels(EvalLabels),
    /// Train the detector from image-level labels.
    TrainDetector(TrainDetector),
    /// Run a trained detector and write a detection dump.
    Detect(Detect),
    /// Score a detection dump or a labels file.
    Evaluate(Evaluate),
}

#[derive(Args)]
struct VocabArgs {
    /// One class name per line.
    #[arg(long)]
    classes: PathBuf,
    /// Tab-separated `phrase<TAB>class` lines.
    #[arg(long)]
    synonyms: Option<PathBuf>,
}

impl VocabArgs {
    fn load(&self) -> Result<CategoryVocabulary> {
        let mut v = CategoryVocabulary::from_class_file(&self.classes)
            .with_context(|| format!("reading classes from {}", self.classes.display()))?;
        if let Some(s) = &self.synonyms {
            v.load_synonyms(s).with_context(|| format!("reading synonyms from {}", s.display()))?;
        }
        Ok(v)
    }
}

#[derive(Args)]
struct MakeSynthetic {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 150)]
    num_train: usize,
    #[arg(long, default_value_t = 50)]
    num_test: usize,
    #[arg(long, default_value_t = 96)]
    size: u32,
    #[arg(long, default_value_t = 4)]
    grid: usize,
    #[arg(long, default_value_t = 2)]
    captions_per_image: usize,
    #[arg(long, default_value_t = 0.3)]
    paraphrase_rate: f64,
    #[arg(long, default_value_t = 0.15)]
    omission_rate: f64,
    #[arg(long, default_value_t = 600)]
    corpus_records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ImportCoco {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    /// Corpus output, one JSON record per image.
    #[arg(long)]
    out: PathBuf,
    /// Class list output, in category-id order.
    #[arg(long)]
    classes_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainTextclf {
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Word vectors, one `word v1 ... vd` line each.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Share of corpus records used, spread evenly over the file.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_embeddings: bool,
    /// One example per record with its captions joined.
    #[arg(long)]
    concatenate: bool,
}

#[derive(Args)]
struct LabelingArgs {
    #[arg(long, default_value = "exact")]
    strategy: LabelStrategy,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
}

struct LoadedResources {
    table: Option<EmbeddingTable>,
    classifier: Option<TextClassifier>,
}

impl LoadedResources {
    fn as_resources(&self) -> LabelResources<'_> {
        LabelResources {
            embeddings: self.table.as_ref(),
            classifier: self.classifier.as_ref(),
        }
    }
}

impl LabelingArgs {
    /// Word vectors restricted to `words` plus the class-name words.
    fn load<'a>(&self, vocab: &CategoryVocabulary, words: impl IntoIterator<Item = &'a String>) -> Result<LoadedResources> {
        let needs_table = matches!(
            self.strategy,
            LabelStrategy::Embedding | LabelStrategy::TwoStep | LabelStrategy::Classifier
        );
        let table = match (&self.embeddings, needs_table) {
            (Some(p), true) => Some(load_embeddings(p, vocab, words)?),
            (None, true) => bail!("strategy `{}` needs --embeddings", self.strategy),
            _ => None,
        };
        let classifier = match (&self.classifier, self.strategy) {
            (Some(p), _) => Some(
                TextClassifier::load(p, vocab).with_context(|| format!("loading classifier {}", p.display()))?,
            ),
            (None, LabelStrategy::TwoStep | LabelStrategy::Classifier) => {
                bail!("strategy `{}` needs --classifier", self.strategy)
            }
            _ => None,
        };
        Ok(LoadedResources { table, classifier })
    }
}

fn load_embeddings<'a>(
    path: &Path,
    vocab: &CategoryVocabulary,
    texts: impl IntoIterator<Item = &'a String>,
) -> Result<EmbeddingTable> {
    let mut words: HashSet<String> = texts.into_iter().flat_map(|t| tokenize(t).tokens).collect();
    words.extend(vocab.classes().iter().flat_map(|c| tokenize(c).tokens));
    EmbeddingTable::load_filtered(path, None, |w| words.contains(w))
        .with_context(|| format!("reading embeddings from {}", path.display()))
}

#[derive(Args)]
struct InferLabels {
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    labeling: LabelingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalLabels {
    #[command(flatten)]
    vocab: VocabArgs,
    /// Manifest with gold labels; scores `--labels`, or labels its captions.
    #[arg(long, conflicts_with = "corpus")]
    manifest: Option<PathBuf>,
    /// Labels file from `infer-labels`.
    #[arg(long, requires = "manifest")]
    labels: Option<PathBuf>,
    /// Caption corpus whose captions are labelled with `--strategy`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    labeling: LabelingArgs,
    /// Label each record's joined captions instead of each caption.
    #[arg(long)]
    join: bool,
    /// Write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainDetector {
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Checkpoint directory; receives latest.json and best.json.
    #[arg(long)]
    out: PathBuf,
    /// Held-out manifest with boxes for best-checkpoint selection.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Detect {
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Evaluate {
    #[command(flatten)]
    vocab: VocabArgs,
    /// Manifest with ground-truth boxes or gold labels.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Labels file, for the `labelpr` protocol.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "voc")]
    protocol: Vec<Protocol>,
    /// Report directory; receives report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-class precision/recall curves into the report directory.
    #[arg(long, requires = "out")]
    pr_curves: bool,
    #[arg(long)]
    eleven_point: bool,
}

fn make_synthetic_cmd(a: MakeSynthetic) -> Result<()> {
    let config = SyntheticConfig {
        num_train: a.num_train,
        num_test: a.num_test,
        size: a.size,
        grid: a.grid,
        captions_per_image: a.captions_per_image,
        paraphrase_rate: a.paraphrase_rate,
        omission_rate: a.omission_rate,
        corpus_records: a.corpus_records,
        seed: a.seed,
    };
    let paths = make_synthetic(&a.out, &config)?;
    println!(
        "wrote {} training and {} test images to {}",
        a.num_train,
        a.num_test,
        paths.root.display()
    );
    Ok(())
}

fn import_coco_cmd(a: ImportCoco) -> Result<()> {
    let (classes, records) = import_coco(&a.captions, &a.instances)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&a.out, text)?;
    if let Some(p) = &a.classes_out {
        fs::write(p, classes.join("\n") + "\n")?;
    }
    println!("{} records, {} classes", records.len(), classes.len());
    Ok(())
}

/// Every `1 / fraction`-th record, deterministically.
fn spread_subset(records: Vec<CorpusRecord>, fraction: f64) -> Vec<CorpusRecord> {
    if fraction >= 1.0 {
        return records;
    }
    records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| ((*i + 1) as f64 * fraction).floor() > (*i as f64 * fraction).floor())
        .map(|(_, r)| r)
        .collect()
}

fn train_textclf_cmd(a: TrainTextclf) -> Result<()> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        bail!("--fraction must be in (0, 1]");
    }
    let vocab = a.vocab.load()?;
    let records = spread_subset(load_corpus(&a.corpus)?, a.fraction);
    let table = load_embeddings(&a.embeddings, &vocab, records.iter().flat_map(|r| &r.captions))?;
    let d = TextClfConfig::default();
    let config = TextClfConfig {
        hidden: a.hidden.unwrap_or(d.hidden),
        lr: a.lr.unwrap_or(d.lr),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
        threshold: a.threshold.unwrap_or(d.threshold),
        train_embeddings: a.train_embeddings,
        concatenate: a.concatenate,
    };
    let examples = examples_from_records(&records, &vocab, config.concatenate)?;
    info!("{} records, {} examples, {} word vectors", records.len(), examples.len(), table.len());
    let (clf, report) = train_text_classifier(&examples, &table, &vocab, &config)?;
    clf.save(&a.out)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        info!("epoch {:>3}  loss {l:.5}", e + 1);
    }
    println!(
        "trained on {} examples ({} skipped), final loss {:.5}",
        examples.len() - report.skipped_examples,
        report.skipped_examples,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn infer_labels_cmd(a: InferLabels) -> Result<()> {
    let vocab = a.vocab.load()?;
    let manifest = load_manifest(&a.manifest)?;
    let res = a.labeling.load(&vocab, manifest.records.iter().flat_map(|r| &r.captions))?;
    let labels = build_image_labels(&manifest, a.labeling.strategy, &vocab, res.as_resources())?;
    labels.save(&a.out, &vocab)?;
    let excluded = labels.excluded();
    println!(
        "{} images labelled with `{}`, {} with no label",
        labels.labels.len(),
        a.labeling.strategy,
        excluded.len()
    );
    Ok(())
}

fn print_label_report(r: &LabelPrReport, vocab: &CategoryVocabulary) {
    let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.2}", 100.0 * v));
    println!("precision {}  recall {}", pct(r.precision), pct(r.recall));
    for (name, c) in vocab.classes().iter().zip(&r.per_class) {
        println!("  {name:<20} P {:>6}  R {:>6}", pct(c.precision), pct(c.recall));
    }
}

fn eval_labels_cmd(a: EvalLabels) -> Result<()> {
    let vocab = a.vocab.load()?;
    let report = match (&a.manifest, &a.labels, &a.corpus) {
        (Some(m), Some(l), _) => {
            let manifest = load_manifest(m)?;
            label_report(&manifest, &ImageLabels::load(l, &vocab)?, &vocab)?
        }
        (Some(m), None, _) => {
            let manifest = load_manifest(m)?;
            let res = a.labeling.load(&vocab, manifest.records.iter().flat_map(|r| &r.captions))?;
            let labels = build_image_labels(&manifest, a.labeling.strategy, &vocab, res.as_resources())?;
            label_report(&manifest, &labels, &vocab)?
        }
        (None, _, Some(c)) => {
            let records = load_corpus(c)?;
            let res = a.labeling.load(&vocab, records.iter().flat_map(|r| &r.captions))?;
            corpus_label_report(&records, a.labeling.strategy, &vocab, res.as_resources(), a.join)?
        }
        _ => bail!("give --manifest (with or without --labels) or --corpus"),
    };
    print_label_report(&report, &vocab);
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn source_for(manifest: DatasetManifest, config: &TrainConfig) -> FeatureSource {
    FeatureSource::new(manifest, ToyFeatureProvider::default(), config.max_proposals)
}

fn train_detector_cmd(a: TrainDetector) -> Result<()> {
    let vocab = a.vocab.load()?;
    let resume = a
        .resume
        .as_ref()
        .map(|p| DetectorCheckpoint::load(p, &vocab).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let base = resume.as_ref().map(|ck| ck.config.clone()).unwrap_or_default();
    let config = layered_config(base, &a.config)?;
    let manifest = load_manifest(&a.manifest)?;
    let labels = ImageLabels::load(&a.labels, &vocab)?;
    let source = source_for(manifest, &config);
    let val_source = match &a.val_manifest {
        Some(p) => Some(source_for(load_manifest(p)?, &config)),
        None => None,
    };
    let validation = match &val_source {
        Some(s) => Some(Validation {
            source: s,
            ground_truth: s.manifest().ground_truth(&vocab)?,
        }),
        None => None,
    };
    let every = a.log_every.max(1);
    let log_step = |step: u64, l: &LossBreakdown| {
        if step.is_multiple_of(every) {
            let parts: Vec<String> = l.refinements.iter().map(|v| format!("{v:.4}")).collect();
            info!("step {step:>6}  total {:.4}  mil {:.4}  refine [{}]", l.total, l.mid, parts.join(", "));
        }
    };
    fs::create_dir_all(&a.out)?;
    let outcome = train_detector(
        &source,
        &labels,
        &vocab,
        &config,
        TrainOptions {
            checkpoint_dir: Some(a.out.clone()),
            resume,
            validation,
            on_step: Some(&log_step),
        },
    )?;
    if !outcome.excluded.is_empty() {
        println!("{} images without labels were skipped", outcome.excluded.len());
    }
    let last = outcome.losses.last().map_or(f64::NAN, |l| l.total);
    println!("step {}  final loss {last:.4}", outcome.checkpoint.step);
    if let Some(best) = &outcome.best {
        println!("best validation mAP@0.5 {:.4} at step {}", best.val_map.unwrap_or(f64::NAN), best.step);
    }
    Ok(())
}

fn detect_cmd(a: Detect) -> Result<()> {
    let vocab = a.vocab.load()?;
    let ck = DetectorCheckpoint::load(&a.checkpoint, &vocab).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let config = layered_config(ck.config.clone(), &a.config)?;
    let source = source_for(load_manifest(&a.manifest)?, &config);
    let dets = detect_all(&ck.model, &source, &config)?;
    write_dump(&a.out, &dets, vocab.classes())?;
    println!("{} detections on {} images", dets.len(), source.len());
    Ok(())
}

fn evaluate_cmd(a: Evaluate) -> Result<()> {
    let vocab = a.vocab.load()?;
    let manifest = load_manifest(&a.manifest)?;
    let interp = if a.eleven_point {
        Interpolation::ElevenPoint
    } else {
        Interpolation::AllPoint
    };
    let box_protocols: Vec<Protocol> = a.protocol.iter().copied().filter(|p| *p != Protocol::LabelPr).collect();
    let gts = manifest.ground_truth(&vocab)?;
    let dets = match &a.detections {
        Some(p) => read_dump(p, &vocab)?,
        None if box_protocols.is_empty() => Vec::new(),
        None => bail!("protocols {box_protocols:?} need --detections"),
    };
    let mut report = evaluate_detections(&dets, &gts, vocab.classes(), &box_protocols, interp);
    if a.protocol.contains(&Protocol::LabelPr) {
        let Some(l) = &a.labels else {
            bail!("protocol labelpr needs --labels");
        };
        report.labels = Some(label_report(&manifest, &ImageLabels::load(l, &vocab)?, &vocab)?);
    }
    print!("{}", report.to_text());
    if let Some(dir) = &a.out {
        write_report(dir, &report)?;
        if a.pr_curves {
            write_pr_curves(dir, &dets, &gts, vocab.classes(), wsod::eval::VOC_IOU)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSynthetic(a) => make_synthetic_cmd(a),
        Command::ImportCoco(a) => import_coco_cmd(a),
        Command::TrainTextclf(a) => train_textclf_cmd(a),
        Command::InferLabels(a) => infer_labels_cmd(a),
        Command::EvalLabels(a) => eval_labels_cmd(a),
        Command::TrainDetector(a) => train_detector_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
