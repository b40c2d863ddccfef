//! Synthetic blob-detection dataset with templated captions.
//!
//! Each image is a noisy dark canvas with one to three coloured ellipses of
//! distinct classes, each inside its own cell of a 4x4 layout. Captions name
//! the objects either by class name or, for a configurable share of captions,
//! only through paraphrases, some of which are missing from the synonym list.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::geometry::BBox;
use crate::labels::EmbeddingTable;
use crate::textclf::CorpusRecord;

use super::config::TrainConfig;
use super::features::ToyFeatureProvider;
use super::manifest::{BoxAnnotation, DatasetManifest, ManifestRecord};
use super::proposals::{grid_proposals, write_proposals};

pub const EMBEDDING_DIM: usize = 300;

struct ClassSpec {
    name: &'static str,
    colour: [f32; 3],
    /// The first paraphrase of each class is listed in `synonyms.tsv`.
    paraphrases: &'static [&'static str],
}

const CLASSES: [ClassSpec; 4] = [
    ClassSpec {
        name: "person",
        colour: [0.9, 0.15, 0.1],
        paraphrases: &["man", "woman", "pedestrian", "guy", "lady"],
    },
    ClassSpec {
        name: "bicycle",
        colour: [0.1, 0.8, 0.2],
        paraphrases: &["bike", "cycle", "tandem", "roadster"],
    },
    ClassSpec {
        name: "dog",
        colour: [0.15, 0.25, 0.95],
        paraphrases: &["puppy", "hound", "pooch", "mutt"],
    },
    ClassSpec {
        name: "car",
        colour: [0.9, 0.85, 0.1],
        paraphrases: &["automobile", "sedan", "taxi", "hatchback"],
    },
];

const TEMPLATES: [&str; 6] = [
    "a photo of {}.",
    "there is {} in this picture",
    "{} on a dark background",
    "an image showing {}",
    "a picture with {} in it.",
    "{} in front of a gray wall",
];

const FILLERS: [&str; 20] = [
    "a", "an", "and", "photo", "of", "there", "is", "in", "this", "picture", "on", "dark", "background", "image",
    "showing", "with", "it", "front", "gray", "wall",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub size: u32,
    pub grid: usize,
    pub captions_per_image: usize,
    /// Share of captions that name objects only through paraphrases.
    pub paraphrase_rate: f64,
    /// Chance that a caption leaves out a given object (at least one is kept).
    pub omission_rate: f64,
    /// Images in the separate text-classifier corpus.
    pub corpus_records: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_train: 150,
            num_test: 50,
            size: 96,
            grid: 4,
            captions_per_image: 2,
            paraphrase_rate: 0.3,
            omission_rate: 0.15,
            corpus_records: 600,
            seed: 0,
        }
    }
}

/// Paths of everything [`make_synthetic`] writes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub root: PathBuf,
    pub classes: PathBuf,
    pub synonyms: PathBuf,
    pub embeddings: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub corpus: PathBuf,
    pub detector_config: PathBuf,
}

impl SyntheticPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            classes: root.join("classes.txt"),
            synonyms: root.join("synonyms.tsv"),
            embeddings: root.join("embeddings.txt"),
            train_manifest: root.join("train.jsonl"),
            test_manifest: root.join("test.jsonl"),
            corpus: root.join("textclf_corpus.jsonl"),
            detector_config: root.join("detector.cfg"),
            root,
        }
    }
}

pub fn class_names() -> Vec<&'static str> {
    CLASSES.iter().map(|c| c.name).collect()
}

/// Detector settings that suit the synthetic images.
pub fn synthetic_train_config() -> TrainConfig {
    TrainConfig {
        lr: 0.05,
        scales: vec![80, 96, 112],
        steps: 2000,
        ..TrainConfig::default()
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn near(concept: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let e = unit_gaussian(rng);
    concept.iter().zip(e).map(|(c, e)| (c + noise * e) as f32).collect()
}

fn embeddings(rng: &mut ChaCha8Rng) -> Result<(EmbeddingTable, Vec<String>)> {
    let mut table = EmbeddingTable::new(EMBEDDING_DIM);
    let mut words = Vec::new();
    for c in &CLASSES {
        let concept = unit_gaussian(rng);
        table.insert(c.name, &near(&concept, 0.3, rng))?;
        words.push(c.name.to_owned());
        for p in c.paraphrases {
            table.insert(*p, &near(&concept, 0.6, rng))?;
            words.push((*p).to_owned());
        }
    }
    for f in FILLERS {
        let v: Vec<f32> = unit_gaussian(rng).into_iter().map(|x| x as f32).collect();
        table.insert(f, &v)?;
        words.push(f.to_owned());
    }
    Ok((table, words))
}

fn mention(word: &str) -> String {
    let article = if word.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{article} {word}")
}

/// One caption naming some or all of `classes`.
pub fn caption_for(classes: &[usize], config: &SyntheticConfig, rng: &mut impl Rng) -> String {
    let paraphrase = rng.random_bool(config.paraphrase_rate);
    let mut named: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|_| !rng.random_bool(config.omission_rate))
        .collect();
    if named.is_empty() {
        named.push(*classes.choose(rng).expect("at least one object"));
    }
    named.shuffle(rng);
    let words: Vec<String> = named
        .iter()
        .map(|&c| {
            let spec = &CLASSES[c];
            mention(if paraphrase {
                spec.paraphrases.choose(rng).expect("paraphrases")
            } else {
                spec.name
            })
        })
        .collect();
    let list = match words.as_slice() {
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
        [] => unreachable!(),
    };
    TEMPLATES.choose(rng).expect("templates").replace("{}", &list)
}

fn random_classes(rng: &mut impl Rng) -> Vec<usize> {
    let k = rng.random_range(1..=3);
    let mut all: Vec<usize> = (0..CLASSES.len()).collect();
    all.shuffle(rng);
    all.truncate(k);
    all.sort_unstable();
    all
}

struct SceneObject {
    class: usize,
    bbox: BBox,
}

fn draw_scene(classes: &[usize], size: u32, rng: &mut impl Rng) -> (RgbImage, Vec<SceneObject>) {
    const CELLS: u32 = 4;
    let cell = size as f64 / CELLS as f64;
    let mut cells: Vec<u32> = (0..CELLS * CELLS).collect();
    cells.shuffle(rng);
    let mut img = RgbImage::from_fn(size, size, |_, _| {
        let v = 0.15 + rng.random_range(-0.04..0.04);
        Rgb([(v * 255.0) as u8; 3])
    });
    let mut objects = Vec::new();
    for (&class, &cell_idx) in classes.iter().zip(&cells) {
        let (col, row) = ((cell_idx % CELLS) as f64, (cell_idx / CELLS) as f64);
        let rx = rng.random_range(0.375..=0.5) * cell;
        let ry = rng.random_range(0.375..=0.5) * cell;
        let cx = col * cell + rx + rng.random_range(0.0..=1.0) * (cell - 2.0 * rx);
        let cy = row * cell + ry + rng.random_range(0.0..=1.0) * (cell - 2.0 * ry);
        let colour: Vec<f32> = CLASSES[class]
            .colour
            .iter()
            .map(|c| (c + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0))
            .collect();
        for y in (cy - ry).floor().max(0.0) as u32..((cy + ry).ceil() as u32).min(size) {
            for x in (cx - rx).floor().max(0.0) as u32..((cx + rx).ceil() as u32).min(size) {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    img.put_pixel(x, y, Rgb([0, 1, 2].map(|k| (colour[k] * 255.0) as u8)));
                }
            }
        }
        objects.push(SceneObject {
            class,
            bbox: BBox::new(cx - rx, cy - ry, cx + rx, cy + ry),
        });
    }
    (img, objects)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes images, proposal files, manifests, the caption corpus and the
/// label resources under `out`. The same config and seed give identical files.
pub fn make_synthetic(out: impl AsRef<Path>, config: &SyntheticConfig) -> Result<SyntheticPaths> {
    let paths = SyntheticPaths::new(out.as_ref());
    fs::create_dir_all(paths.root.join("images"))?;
    fs::create_dir_all(paths.root.join("proposals"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    fs::write(&paths.classes, class_names().join("\n") + "\n")?;
    let synonyms: String = CLASSES
        .iter()
        .map(|c| format!("{}\t{}\n", c.paraphrases[0], c.name))
        .collect();
    fs::write(&paths.synonyms, synonyms)?;
    let (table, words) = embeddings(&mut rng)?;
    table.save(&paths.embeddings, words.iter().map(String::as_str))?;
    fs::write(&paths.detector_config, synthetic_train_config().to_text())?;

    let provider = ToyFeatureProvider::default();
    let size = f64::from(config.size);
    let boxes = grid_proposals(size, size, config.grid, crate::mil::MAX_PROPOSALS);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..config.num_train + config.num_test {
        let id = format!("img_{i:03}");
        let classes = random_classes(&mut rng);
        let (img, objects) = draw_scene(&classes, config.size, &mut rng);
        let image_rel = PathBuf::from("images").join(format!("{id}.png"));
        let prop_rel = PathBuf::from("proposals").join(format!("{id}.bin"));
        img.save(paths.root.join(&image_rel))?;
        let features = provider.extract(&image::DynamicImage::ImageRgb8(img).to_rgb32f(), &boxes, None, false);
        write_proposals(paths.root.join(&prop_rel), &boxes, Some(&features))?;
        let captions = (0..config.captions_per_image)
            .map(|_| caption_for(&classes, config, &mut rng))
            .collect();
        let record = ManifestRecord {
            image_id: id,
            image: Some(image_rel),
            proposals: prop_rel,
            captions,
            gold_labels: Some(classes.iter().map(|&c| CLASSES[c].name.to_owned()).collect()),
            gt_boxes: objects
                .iter()
                .map(|o| BoxAnnotation {
                    class: CLASSES[o.class].name.to_owned(),
                    bbox: [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                })
                .collect(),
        };
        if i < config.num_train {
            train.push(record);
        } else {
            test.push(record);
        }
    }
    let root = paths.root.clone();
    DatasetManifest { root: root.clone(), records: train }.save(&paths.train_manifest)?;
    DatasetManifest { root, records: test }.save(&paths.test_manifest)?;

    let corpus: Vec<CorpusRecord> = (0..config.corpus_records)
        .map(|i| {
            let classes = random_classes(&mut rng);
            CorpusRecord {
                image_id: format!("text_{i:04}"),
                captions: (0..config.captions_per_image)
                    .map(|_| caption_for(&classes, config, &mut rng))
                    .collect(),
                gold_labels: classes.iter().map(|&c| CLASSES[c].name.to_owned()).collect(),
            }
        })
        .collect();
    write_jsonl(&paths.corpus, &corpus)?;
    Ok(paths)
}
