//! Import of COCO-style caption and instance annotation files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::Result;
use crate::textclf::CorpusRecord;

#[derive(Deserialize)]
struct CaptionFile {
    annotations: Vec<CaptionAnnotation>,
}

#[derive(Deserialize)]
struct CaptionAnnotation {
    image_id: u64,
    caption: String,
}

#[derive(Deserialize)]
struct InstanceFile {
    categories: Vec<Category>,
    annotations: Vec<InstanceAnnotation>,
}

#[derive(Deserialize)]
struct Category {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct InstanceAnnotation {
    image_id: u64,
    category_id: u64,
}

/// Class names in category-id order and one corpus record per captioned
/// image, with the categories of its instance annotations as gold labels.
pub fn import_coco(captions: impl AsRef<Path>, instances: impl AsRef<Path>) -> Result<(Vec<String>, Vec<CorpusRecord>)> {
    let caps: CaptionFile = serde_json::from_slice(&fs::read(captions)?)?;
    let inst: InstanceFile = serde_json::from_slice(&fs::read(instances)?)?;
    let mut cats = inst.categories;
    cats.sort_by_key(|c| c.id);
    let names: BTreeMap<u64, &str> = cats.iter().map(|c| (c.id, c.name.as_str())).collect();

    let mut labels: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for a in &inst.annotations {
        labels.entry(a.image_id).or_default().insert(a.category_id);
    }
    let mut texts: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for a in caps.annotations {
        texts.entry(a.image_id).or_default().push(a.caption);
    }
    let records = texts
        .into_iter()
        .map(|(id, captions)| CorpusRecord {
            image_id: id.to_string(),
            captions,
            gold_labels: labels
                .get(&id)
                .into_iter()
                .flatten()
                .filter_map(|c| names.get(c).map(|n| (*n).to_owned()))
                .collect(),
        })
        .collect();
    Ok((cats.into_iter().map(|c| c.name).collect(), records))
}
