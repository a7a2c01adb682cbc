//! Domain types and ingestion for annotations, detections, embeddings and
//! visual prototypes.
//!
//! All inputs are JSON lines. A record may carry fields this crate does not
//! know about; they are ignored. A leading `{"_provenance": ...}` line, as
//! written by the CLI, is skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{HoiError, Result};
use crate::jsonl;
use crate::provenance::Provenance;

pub const DEFAULT_FEATURE_DIM: usize = 2048;
pub const DEFAULT_EMBEDDING_DIM: usize = 300;
pub const DEFAULT_HUMAN_CLASS: &str = "person";

/// Axis-aligned box in pixel coordinates, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(HoiError::invalid(
                "bounding box",
                format!("coordinates must be finite and non-negative, got {coords:?}"),
            ));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(HoiError::DegenerateBox(coords));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = HoiError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
}

impl ImageInfo {
    pub fn new(image_id: impl Into<String>, width: f64, height: f64) -> Result<Self> {
        let image_id = image_id.into();
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(HoiError::invalid(
                format!("image {image_id}"),
                format!("width and height must be finite and positive, got {width} x {height}"),
            ));
        }
        Ok(ImageInfo { image_id, width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub class_name: String,
    pub confidence: f64,
    pub feature: Option<Vec<f64>>,
}

/// One labelled human-object pair. `predicates` is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTriplet {
    pub image_id: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: String,
    pub predicates: BTreeSet<String>,
    pub human_feature: Vec<f64>,
    /// Produced by object substitution rather than annotated.
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub triplets: Vec<InteractionTriplet>,
    pub object_vocabulary: Vec<String>,
    pub predicate_vocabulary: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose vocabularies are the sorted classes and
    /// predicates occurring in `triplets`.
    pub fn from_parts(images: Vec<ImageInfo>, triplets: Vec<InteractionTriplet>) -> Result<Self> {
        let mut seen = HashMap::new();
        for img in &images {
            if seen.insert(img.image_id.as_str(), ()).is_some() {
                return Err(HoiError::invalid("dataset", format!("duplicate image_id {}", img.image_id)));
            }
        }
        let mut objects = BTreeSet::new();
        let mut predicates = BTreeSet::new();
        for (i, t) in triplets.iter().enumerate() {
            if !seen.contains_key(t.image_id.as_str()) {
                return Err(HoiError::invalid(
                    format!("triplet {i}"),
                    format!("image_id {} has no image entry", t.image_id),
                ));
            }
            if t.predicates.is_empty() {
                return Err(HoiError::invalid(format!("triplet {i}"), "empty predicate set"));
            }
            objects.insert(t.object_class.clone());
            predicates.extend(t.predicates.iter().cloned());
        }
        Ok(Dataset {
            images,
            triplets,
            object_vocabulary: objects.into_iter().collect(),
            predicate_vocabulary: predicates.into_iter().collect(),
        })
    }

    pub fn image_map(&self) -> HashMap<&str, &ImageInfo> {
        self.images.iter().map(|img| (img.image_id.as_str(), img)).collect()
    }

    /// Union of predicates labelled anywhere in each image.
    pub fn image_predicates(&self) -> HashMap<&str, BTreeSet<&str>> {
        let mut out: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for t in &self.triplets {
            out.entry(t.image_id.as_str()).or_default().extend(t.predicates.iter().map(String::as_str));
        }
        out
    }

    /// Keeps `images` as-is and rebuilds vocabularies from `triplets`.
    pub fn with_triplets(&self, triplets: Vec<InteractionTriplet>) -> Result<Self> {
        Dataset::from_parts(self.images.clone(), triplets)
    }
}

/// Dimensions and class conventions checked while loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub human_classes: BTreeSet<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            feature_dim: DEFAULT_FEATURE_DIM,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            human_classes: BTreeSet::from([DEFAULT_HUMAN_CLASS.to_string()]),
        }
    }
}

impl LoadOptions {
    pub fn is_human(&self, class_name: &str) -> bool {
        self.human_classes.contains(class_name)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    image_id: String,
    width: f64,
    height: f64,
    human_box: [f64; 4],
    object_box: [f64; 4],
    object_class: String,
    predicates: Vec<String>,
    human_feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
}

fn check_vector(what: impl Fn() -> String, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(HoiError::Dimension { what: what(), expected: dim, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(HoiError::invalid(what(), "vector has non-finite entries"));
    }
    Ok(())
}

fn record_box(context: &str, field: &str, c: [f64; 4]) -> Result<BoundingBox> {
    BoundingBox::try_from(c).map_err(|e| HoiError::invalid(context, format!("{field}: {e}")))
}

pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    read_dataset(jsonl::open(path)?, &path.display().to_string(), opts)
}

pub fn read_dataset<R: BufRead>(reader: R, source: &str, opts: &LoadOptions) -> Result<Dataset> {
    let mut images: Vec<ImageInfo> = Vec::new();
    let mut image_index: HashMap<String, usize> = HashMap::new();
    let mut triplets = Vec::new();
    jsonl::for_each_record(reader, source, |line, rec: AnnotationRecord| {
        let ctx = format!("{source}:{line} (image {})", rec.image_id);
        let info = ImageInfo::new(rec.image_id.clone(), rec.width, rec.height)
            .map_err(|e| HoiError::invalid(&ctx, e.to_string()))?;
        match image_index.get(&rec.image_id) {
            Some(&i) if images[i] != info => {
                return Err(HoiError::invalid(&ctx, "image size disagrees with an earlier record"))
            }
            Some(_) => {}
            None => {
                image_index.insert(rec.image_id.clone(), images.len());
                images.push(info);
            }
        }
        let human_box = record_box(&ctx, "human_box", rec.human_box)?;
        let object_box = record_box(&ctx, "object_box", rec.object_box)?;
        if rec.predicates.is_empty() {
            return Err(HoiError::invalid(&ctx, "predicates must be non-empty"));
        }
        check_vector(|| format!("{ctx}: human_feature"), &rec.human_feature, opts.feature_dim)?;
        triplets.push(InteractionTriplet {
            image_id: rec.image_id,
            human_box,
            object_box,
            object_class: rec.object_class,
            predicates: rec.predicates.into_iter().collect(),
            human_feature: rec.human_feature,
            synthetic: rec.synthetic,
        });
        Ok(())
    })?;
    Dataset::from_parts(images, triplets)
}

pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset, provenance: Option<&Provenance>) -> Result<()> {
    let images = dataset.image_map();
    let mut records = Vec::with_capacity(dataset.triplets.len());
    for t in &dataset.triplets {
        let img = images
            .get(t.image_id.as_str())
            .ok_or_else(|| HoiError::invalid("dataset", format!("image_id {} has no image entry", t.image_id)))?;
        records.push(AnnotationRecord {
            image_id: t.image_id.clone(),
            width: img.width,
            height: img.height,
            human_box: t.human_box.to_array(),
            object_box: t.object_box.to_array(),
            object_class: t.object_class.clone(),
            predicates: t.predicates.iter().cloned().collect(),
            human_feature: t.human_feature.clone(),
            synthetic: t.synthetic,
        });
    }
    jsonl::write_records(writer, provenance, records)
}

pub fn save_dataset(path: &Path, dataset: &Dataset, provenance: Option<&Provenance>) -> Result<()> {
    write_dataset(jsonl::create(path)?, dataset, provenance)
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    image_id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_name: String,
    confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
}

/// Detections grouped by image in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub groups: IndexMap<String, Vec<Detection>>,
    /// Image sizes carried on detection records (`width`/`height` fields).
    pub images: BTreeMap<String, ImageInfo>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, det: Detection) {
        self.groups.entry(det.image_id.clone()).or_default().push(det);
    }
}

pub fn load_detections(path: &Path, opts: &LoadOptions) -> Result<DetectionSet> {
    read_detections(jsonl::open(path)?, &path.display().to_string(), opts)
}

pub fn read_detections<R: BufRead>(reader: R, source: &str, opts: &LoadOptions) -> Result<DetectionSet> {
    let mut set = DetectionSet::default();
    jsonl::for_each_record(reader, source, |line, rec: DetectionRecord| {
        let ctx = format!("{source}:{line} (image {})", rec.image_id);
        if !(0.0..=1.0).contains(&rec.confidence) {
            return Err(HoiError::invalid(&ctx, format!("confidence {} outside [0, 1]", rec.confidence)));
        }
        let bbox = record_box(&ctx, "box", rec.bbox)?;
        match &rec.feature {
            Some(f) => check_vector(|| format!("{ctx}: feature"), f, opts.feature_dim)?,
            None if opts.is_human(&rec.class_name) => {
                return Err(HoiError::invalid(&ctx, "human detection is missing its feature"))
            }
            None => {}
        }
        match (rec.width, rec.height) {
            (Some(w), Some(h)) => {
                let info =
                    ImageInfo::new(rec.image_id.clone(), w, h).map_err(|e| HoiError::invalid(&ctx, e.to_string()))?;
                if let Some(prev) = set.images.get(&rec.image_id) {
                    if *prev != info {
                        return Err(HoiError::invalid(&ctx, "image size disagrees with an earlier record"));
                    }
                }
                set.images.insert(rec.image_id.clone(), info);
            }
            (None, None) => {}
            _ => return Err(HoiError::invalid(&ctx, "width and height must be given together")),
        }
        set.push(Detection {
            image_id: rec.image_id,
            bbox,
            class_name: rec.class_name,
            confidence: rec.confidence,
            feature: rec.feature,
        });
        Ok(())
    })?;
    Ok(set)
}

pub fn write_detections<W: Write>(writer: W, set: &DetectionSet, provenance: Option<&Provenance>) -> Result<()> {
    let records = set.groups.values().flatten().map(|d| {
        let img = set.images.get(&d.image_id);
        DetectionRecord {
            image_id: d.image_id.clone(),
            bbox: d.bbox.to_array(),
            class_name: d.class_name.clone(),
            confidence: d.confidence,
            feature: d.feature.clone(),
            width: img.map(|i| i.width),
            height: img.map(|i| i.height),
        }
    });
    jsonl::write_records(writer, provenance, records)
}

/// Token- or class-keyed table of equal-length vectors, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    dim: usize,
    entries: IndexMap<String, Vec<f64>>,
}

/// Word vectors keyed by token.
pub type EmbeddingTable = VectorTable;
/// Per-class visual feature averaged over a world set of images.
pub type VisualPrototypeTable = VectorTable;

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        VectorTable { dim, entries: IndexMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let key = key.into();
        check_vector(|| format!("vector for `{key}`"), &vector, self.dim)?;
        if self.entries.contains_key(&key) {
            return Err(HoiError::invalid("vector table", format!("duplicate key `{key}`")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    token: String,
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct PrototypeRecord {
    class_name: String,
    vector: Vec<f64>,
}

fn read_table<R, T, F>(reader: R, source: &str, expected_dim: Option<usize>, split: F) -> Result<VectorTable>
where
    R: BufRead,
    T: serde::de::DeserializeOwned,
    F: Fn(T) -> (String, Vec<f64>),
{
    let mut table: Option<VectorTable> = None;
    jsonl::for_each_record(reader, source, |line, rec: T| {
        let (key, vector) = split(rec);
        let t = table.get_or_insert_with(|| VectorTable::new(expected_dim.unwrap_or(vector.len())));
        t.insert(key, vector).map_err(|e| HoiError::invalid(format!("{source}:{line}"), e.to_string()))
    })?;
    Ok(table.unwrap_or_else(|| VectorTable::new(expected_dim.unwrap_or(0))))
}

/// Loads `{token, vector}` records. With `expected_dim` set every vector must
/// have that length; otherwise the first record fixes it.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    read_embeddings(jsonl::open(path)?, &path.display().to_string(), expected_dim)
}

pub fn read_embeddings<R: BufRead>(reader: R, source: &str, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    read_table(reader, source, expected_dim, |r: EmbeddingRecord| (r.token, r.vector))
}

/// Loads `{class_name, vector}` records.
pub fn load_visual_prototypes(path: &Path, expected_dim: Option<usize>) -> Result<VisualPrototypeTable> {
    read_visual_prototypes(jsonl::open(path)?, &path.display().to_string(), expected_dim)
}

pub fn read_visual_prototypes<R: BufRead>(
    reader: R,
    source: &str,
    expected_dim: Option<usize>,
) -> Result<VisualPrototypeTable> {
    read_table(reader, source, expected_dim, |r: PrototypeRecord| (r.class_name, r.vector))
}

pub fn write_embeddings<W: Write>(writer: W, table: &EmbeddingTable, provenance: Option<&Provenance>) -> Result<()> {
    let records = table.iter().map(|(k, v)| serde_json::json!({ "token": k, "vector": v }));
    jsonl::write_records(writer, provenance, records)
}

pub fn write_visual_prototypes<W: Write>(
    writer: W,
    table: &VisualPrototypeTable,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let records = table.iter().map(|(k, v)| serde_json::json!({ "class_name": k, "vector": v }));
    jsonl::write_records(writer, provenance, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> LoadOptions {
        LoadOptions { feature_dim: 2, embedding_dim: 3, ..LoadOptions::default() }
    }

    const RIDE: &str = r#"{"image_id":"a","width":100,"height":80,"human_box":[10,10,40,70],"object_box":[5,40,60,79],"object_class":"horse","predicates":["ride","sit_on"],"human_feature":[0.5,-1.0],"extra":"ignored"}"#;

    #[test]
    fn empty_annotation_file() {
        let d = read_dataset("".as_bytes(), "mem", &opts()).unwrap();
        assert!(d.triplets.is_empty());
        assert!(d.images.is_empty());
    }

    #[test]
    fn single_triplet_builds_vocabularies() {
        let d = read_dataset(RIDE.as_bytes(), "mem", &opts()).unwrap();
        assert_eq!(d.triplets.len(), 1);
        assert_eq!(d.object_vocabulary, vec!["horse"]);
        assert_eq!(d.predicate_vocabulary, vec!["ride", "sit_on"]);
        assert_eq!(d.images[0], ImageInfo::new("a", 100.0, 80.0).unwrap());
        for p in &d.triplets[0].predicates {
            assert!(d.predicate_vocabulary.contains(p));
        }
    }

    #[test]
    fn degenerate_box_names_the_record() {
        let line = RIDE.replace("[10,10,40,70]", "[10,10,10,70]");
        let err = read_dataset(line.as_bytes(), "ann.jsonl", &opts()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ann.jsonl:1"), "{msg}");
        assert!(msg.contains("human_box"), "{msg}");
        assert!(msg.contains("degenerate"), "{msg}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = format!("{RIDE}\n{{not json\n");
        match read_dataset(text.as_bytes(), "ann.jsonl", &opts()).unwrap_err() {
            HoiError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_dimension_checked() {
        let line = RIDE.replace("[0.5,-1.0]", "[0.5]");
        assert!(matches!(
            read_dataset(line.as_bytes(), "mem", &opts()),
            Err(HoiError::Dimension { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn conflicting_image_sizes_rejected() {
        let text = format!("{RIDE}\n{}", RIDE.replace("\"height\":80", "\"height\":81"));
        assert!(read_dataset(text.as_bytes(), "mem", &opts()).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let text = format!("{RIDE}\n{}", RIDE.replace("horse", "bicycle").replace("\"a\"", "\"b\""));
        let d = read_dataset(text.as_bytes(), "mem", &opts()).unwrap();
        let mut buf = Vec::new();
        let prov = Provenance::new("test", &"cfg", Some(1));
        write_dataset(&mut buf, &d, Some(&prov)).unwrap();
        let back = read_dataset(buf.as_slice(), "mem", &opts()).unwrap();
        assert_eq!(d, back);
    }

    const DET_H: &str = r#"{"image_id":"a","box":[0,0,10,10],"class_name":"person","confidence":0.95,"feature":[1,2]}"#;
    const DET_O: &str = r#"{"image_id":"a","box":[5,5,20,20],"class_name":"cup","confidence":0.5}"#;

    #[test]
    fn confidence_out_of_range() {
        let line = DET_O.replace("0.5", "1.01");
        assert!(read_detections(line.as_bytes(), "mem", &opts()).is_err());
    }

    #[test]
    fn detections_grouped_by_image() {
        let text = format!("{DET_H}\n{DET_O}\n");
        let set = read_detections(text.as_bytes(), "mem", &opts()).unwrap();
        assert_eq!(set.groups.len(), 1);
        assert_eq!(set.groups["a"].len(), 2);
        assert_eq!(set.groups["a"][0].class_name, "person");
    }

    #[test]
    fn human_detection_requires_feature() {
        let line = DET_O.replace("cup", "person");
        let err = read_detections(line.as_bytes(), "mem", &opts()).unwrap_err();
        assert!(err.to_string().contains("missing its feature"));
    }

    #[test]
    fn detection_feature_dimension_checked() {
        let line = DET_H.replace("[1,2]", "[1,2,3]");
        assert!(matches!(read_detections(line.as_bytes(), "mem", &opts()), Err(HoiError::Dimension { .. })));
    }

    #[test]
    fn embeddings_load() {
        let v = vec![0.25; 300];
        let text: String = ["cup", "glass", "mug"]
            .iter()
            .map(|t| format!("{}\n", serde_json::json!({"token": t, "vector": v})))
            .collect();
        let table = read_embeddings(text.as_bytes(), "mem", Some(300)).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.dim(), 300);
        assert_eq!(table.keys().collect::<Vec<_>>(), vec!["cup", "glass", "mug"]);
    }

    #[test]
    fn duplicate_token_rejected() {
        let text = "{\"token\":\"cup\",\"vector\":[1,2]}\n{\"token\":\"cup\",\"vector\":[3,4]}\n";
        let err = read_embeddings(text.as_bytes(), "mem", None).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn nan_and_ragged_vectors_rejected() {
        assert!(read_embeddings("{\"token\":\"cup\",\"vector\":[1,NaN]}".as_bytes(), "mem", None).is_err());
        assert!(read_embeddings("{\"token\":\"cup\",\"vector\":[1,1e999]}".as_bytes(), "mem", None).is_err());
        let ragged = "{\"token\":\"a\",\"vector\":[1,2]}\n{\"token\":\"b\",\"vector\":[1]}\n";
        assert!(read_embeddings(ragged.as_bytes(), "mem", None).is_err());
        let mut t = VectorTable::new(2);
        assert!(t.insert("x", vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn loading_is_deterministic() {
        let text = format!("{RIDE}\n{}", RIDE.replace("horse", "cow"));
        let a = read_dataset(text.as_bytes(), "mem", &opts()).unwrap();
        let b = read_dataset(text.as_bytes(), "mem", &opts()).unwrap();
        assert_eq!(a, b);
    }
}
