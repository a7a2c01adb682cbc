//! HOI detection evaluation: per-class average precision, bucketed mean AP,
//! rare and zero-shot class splits, and verb-object bias measurements.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{BoundingBox, Dataset};
use crate::error::{HoiError, Result};
use crate::geometry::iou;
use crate::jsonl;
use crate::pipeline::HoiDetection;
use crate::provenance::Provenance;

/// A detection matches a ground truth when both box overlaps exceed this.
pub const MATCH_IOU: f64 = 0.5;
pub const DEFAULT_RARE_THRESHOLD: usize = 10;
pub const DEFAULT_MAX_SPLIT_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HoiClass {
    pub object_class: String,
    pub predicate: String,
}

impl HoiClass {
    pub fn new(object_class: impl Into<String>, predicate: impl Into<String>) -> Self {
        HoiClass { object_class: object_class.into(), predicate: predicate.into() }
    }

    pub fn of(d: &HoiDetection) -> Self {
        HoiClass::new(d.object_class.clone(), d.predicate.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class: HoiClass,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
}

/// Ground-truth instances per class. Synthetic triplets are skipped.
pub fn ground_truth_by_class(d: &Dataset) -> BTreeMap<HoiClass, Vec<GroundTruth>> {
    let mut out: BTreeMap<HoiClass, Vec<GroundTruth>> = BTreeMap::new();
    for t in d.triplets.iter().filter(|t| !t.synthetic) {
        for p in &t.predicates {
            let class = HoiClass::new(t.object_class.clone(), p.clone());
            out.entry(class.clone()).or_default().push(GroundTruth {
                image_id: t.image_id.clone(),
                class,
                human_box: t.human_box,
                object_box: t.object_box,
            });
        }
    }
    out
}

/// Classes occurring in `d` (synthetic triplets skipped).
pub fn dataset_classes(d: &Dataset) -> BTreeSet<HoiClass> {
    ground_truth_by_class(d).into_keys().collect()
}

/// Matched ground-truth index for each detection, in descending-score order
/// (ties by input position). Each detection takes the unmatched ground truth
/// of its image with the highest `min(iou_h, iou_o)` above [`MATCH_IOU`];
/// equal overlaps go to the lower index.
pub fn match_detections(dets: &[HoiDetection], gts: &[GroundTruth]) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_image.entry(gt.image_id.as_str()).or_default().push(g);
    }
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for &g in by_image.get(d.image_id.as_str()).into_iter().flatten() {
                if used[g] {
                    continue;
                }
                let overlap = iou(&d.human_box, &gts[g].human_box).min(iou(&d.object_box, &gts[g].object_box));
                if overlap > MATCH_IOU && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            (i, best.map(|(g, _)| g))
        })
        .collect()
}

/// All-point interpolated area under the precision-recall curve of one HOI
/// class. Zero when the class has no ground truth.
pub fn average_precision(class: &HoiClass, dets: &[HoiDetection], gts: &[GroundTruth]) -> Result<f64> {
    if let Some(d) = dets.iter().find(|d| d.object_class != class.object_class || d.predicate != class.predicate) {
        return Err(HoiError::invalid(
            "average precision",
            format!("detection of ({}, {}) evaluated as {class:?}", d.object_class, d.predicate),
        ));
    }
    if let Some(g) = gts.iter().find(|g| g.class != *class) {
        return Err(HoiError::invalid(
            "average precision",
            format!("ground truth {:?} evaluated as {class:?}", g.class),
        ));
    }
    if gts.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = match_detections(dets, gts).into_iter().map(|(_, m)| m.is_some()).collect();
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Precision envelope: best precision at this rank or any later one.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let step = 1.0 / gts.len() as f64;
    Ok(hits.iter().zip(&precision).filter(|(hit, _)| **hit).fold(0.0, |acc, (_, p)| acc + p * step))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

/// AP for every class present in the ground truth or the detections.
pub fn evaluate(dets: &[HoiDetection], gt: &Dataset) -> Result<BTreeMap<HoiClass, ClassAp>> {
    let gts = ground_truth_by_class(gt);
    let mut dets_by_class: BTreeMap<HoiClass, Vec<HoiDetection>> = BTreeMap::new();
    for d in dets {
        dets_by_class.entry(HoiClass::of(d)).or_default().push(d.clone());
    }
    let classes: BTreeSet<&HoiClass> = gts.keys().chain(dets_by_class.keys()).collect();
    let empty_d = Vec::new();
    let empty_g = Vec::new();
    classes
        .into_iter()
        .map(|c| {
            let d = dets_by_class.get(c).unwrap_or(&empty_d);
            let g = gts.get(c).unwrap_or(&empty_g);
            Ok((c.clone(), ClassAp { ap: average_precision(c, d, g)?, num_gt: g.len(), num_det: d.len() }))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Rare,
    SeenObject,
    UnseenObject,
    Custom,
}

/// Named buckets of HOI classes (`full`/`rare`/`non_rare` or
/// `full`/`unseen`/`seen`) plus how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub name: String,
    pub kind: SplitKind,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Rare threshold, number of unseen classes or number of unseen objects.
    #[serde(default)]
    pub parameter: Option<usize>,
    /// Objects drawn for an unseen-object split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unseen_objects: Vec<String>,
    pub buckets: BTreeMap<String, Vec<HoiClass>>,
}

impl SplitSpec {
    pub fn bucket(&self, name: &str) -> &[HoiClass] {
        self.buckets.get(name).map_or(&[], Vec::as_slice)
    }

    /// A split with only a `full` bucket.
    pub fn full_only(classes: impl IntoIterator<Item = HoiClass>) -> Self {
        let full: BTreeSet<HoiClass> = classes.into_iter().collect();
        SplitSpec {
            provenance: None,
            name: "full".into(),
            kind: SplitKind::Custom,
            seed: None,
            parameter: None,
            unseen_objects: Vec::new(),
            buckets: BTreeMap::from([("full".to_string(), full.into_iter().collect())]),
        }
    }
}

fn split_from(
    name: &str,
    kind: SplitKind,
    seed: Option<u64>,
    parameter: usize,
    parts: [(&str, BTreeSet<HoiClass>); 2],
) -> SplitSpec {
    let full: BTreeSet<HoiClass> = parts.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let mut buckets = BTreeMap::from([("full".to_string(), full.into_iter().collect())]);
    for (bucket, set) in parts {
        buckets.insert(bucket.to_string(), set.into_iter().collect());
    }
    SplitSpec {
        provenance: None,
        name: name.to_string(),
        kind,
        seed,
        parameter: Some(parameter),
        unseen_objects: Vec::new(),
        buckets,
    }
}

/// Training instances per class, one per (triplet, predicate); synthetic
/// triplets are not counted.
pub fn class_counts(train: &Dataset) -> BTreeMap<HoiClass, usize> {
    ground_truth_by_class(train).into_iter().map(|(c, v)| (c, v.len())).collect()
}

/// Rare = classes with fewer than `threshold` training instances. `classes`
/// is the evaluated universe; classes seen only in `train` join it.
pub fn make_rare_split(train: &Dataset, classes: &[HoiClass], threshold: usize) -> SplitSpec {
    let counts = class_counts(train);
    let universe: BTreeSet<HoiClass> = classes.iter().cloned().chain(counts.keys().cloned()).collect();
    let (rare, non_rare): (BTreeSet<HoiClass>, BTreeSet<HoiClass>) =
        universe.into_iter().partition(|c| counts.get(c).copied().unwrap_or(0) < threshold);
    split_from("rare", SplitKind::Rare, None, threshold, [("rare", rare), ("non_rare", non_rare)])
}

/// True when every object of an unseen class also occurs in a seen class.
pub fn objects_remain_seen(unseen: &[HoiClass], seen: &[HoiClass]) -> bool {
    let seen_objects: BTreeSet<&str> = seen.iter().map(|c| c.object_class.as_str()).collect();
    unseen.iter().all(|c| seen_objects.contains(c.object_class.as_str()))
}

/// Draws `n_unseen` classes uniformly until every drawn object still appears
/// among the remaining classes, trying at most `max_tries` draws.
pub fn make_seen_object_split(classes: &[HoiClass], n_unseen: usize, seed: u64, max_tries: usize) -> Result<SplitSpec> {
    let universe: Vec<HoiClass> = classes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if n_unseen > universe.len() {
        return Err(HoiError::InfeasibleSplit(format!("{n_unseen} unseen classes requested from {}", universe.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_tries.max(1) {
        let picked: BTreeSet<usize> = sample(&mut rng, universe.len(), n_unseen).into_iter().collect();
        let (unseen, seen): (Vec<_>, Vec<_>) = universe.iter().enumerate().partition(|(i, _)| picked.contains(i));
        let unseen: Vec<HoiClass> = unseen.into_iter().map(|(_, c)| c.clone()).collect();
        let seen: Vec<HoiClass> = seen.into_iter().map(|(_, c)| c.clone()).collect();
        if objects_remain_seen(&unseen, &seen) {
            return Ok(split_from(
                "seen_object",
                SplitKind::SeenObject,
                Some(seed),
                n_unseen,
                [("unseen", unseen.into_iter().collect()), ("seen", seen.into_iter().collect())],
            ));
        }
    }
    Err(HoiError::InfeasibleSplit(format!("no valid choice of {n_unseen} unseen classes found in {max_tries} draws")))
}

/// Unseen = every class whose object is among `n_objects` objects drawn from
/// `objects`.
pub fn make_unseen_object_split(
    classes: &[HoiClass],
    objects: &[String],
    n_objects: usize,
    seed: u64,
) -> Result<SplitSpec> {
    let vocabulary: Vec<&String> = objects.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if n_objects > vocabulary.len() {
        return Err(HoiError::InfeasibleSplit(format!(
            "{n_objects} unseen objects requested from {}",
            vocabulary.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: BTreeSet<&str> =
        sample(&mut rng, vocabulary.len(), n_objects).into_iter().map(|i| vocabulary[i].as_str()).collect();
    let (unseen, seen): (BTreeSet<HoiClass>, BTreeSet<HoiClass>) =
        classes.iter().cloned().partition(|c| drawn.contains(c.object_class.as_str()));
    let mut spec = split_from(
        "unseen_object",
        SplitKind::UnseenObject,
        Some(seed),
        n_objects,
        [("unseen", unseen), ("seen", seen)],
    );
    spec.unseen_objects = drawn.into_iter().map(str::to_string).collect();
    Ok(spec)
}

pub fn save_split(path: &Path, split: &SplitSpec) -> Result<()> {
    write_json(path, split)
}

pub fn load_split(path: &Path) -> Result<SplitSpec> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMap {
    pub map: Option<f64>,
    /// Classes averaged (those with ground truth).
    pub classes: usize,
}

/// Mean AP per bucket over classes that have ground truth. A bucket class
/// absent from `per_class` has neither ground truth nor detections and is
/// skipped.
pub fn mean_ap(per_class: &BTreeMap<HoiClass, ClassAp>, split: &SplitSpec) -> BTreeMap<String, BucketMap> {
    split
        .buckets
        .iter()
        .map(|(name, classes)| {
            let aps: Vec<f64> =
                classes.iter().filter_map(|c| per_class.get(c)).filter(|r| r.num_gt > 0).map(|r| r.ap).collect();
            let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            (name.clone(), BucketMap { map, classes: aps.len() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(flatten)]
    pub class: HoiClass,
    #[serde(flatten)]
    pub result: ClassAp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub split: String,
    pub buckets: BTreeMap<String, BucketMap>,
    pub per_class: Vec<ClassReport>,
}

pub fn eval_report(dets: &[HoiDetection], gt: &Dataset, split: &SplitSpec) -> Result<EvalReport> {
    let per_class = evaluate(dets, gt)?;
    Ok(EvalReport {
        provenance: None,
        split: split.name.clone(),
        buckets: mean_ap(&per_class, split),
        per_class: per_class.into_iter().map(|(class, result)| ClassReport { class, result }).collect(),
    })
}

/// Instance counts `c(predicate, object)` within one set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BiasCounts {
    counts: BTreeMap<(String, String), usize>,
}

impl BiasCounts {
    pub fn add(&mut self, predicate: &str, object: &str, n: usize) {
        *self.counts.entry((predicate.to_string(), object.to_string())).or_default() += n;
    }

    pub fn count(&self, predicate: &str, object: &str) -> usize {
        self.counts.get(&(predicate.to_string(), object.to_string())).copied().unwrap_or(0)
    }

    pub fn object_total(&self, object: &str) -> usize {
        self.counts.iter().filter(|((_, o), _)| o == object).map(|(_, n)| n).sum()
    }

    /// One instance per (triplet, predicate).
    pub fn from_dataset(d: &Dataset) -> Self {
        let mut c = BiasCounts::default();
        for t in &d.triplets {
            for p in &t.predicates {
                c.add(p, &t.object_class, 1);
            }
        }
        c
    }

    /// One instance per predicted detection.
    pub fn from_detections(dets: &[HoiDetection]) -> Self {
        let mut c = BiasCounts::default();
        for d in dets {
            c.add(&d.predicate, &d.object_class, 1);
        }
        c
    }
}

/// `c(predicate, object) / sum_v c(v, object)`.
pub fn bias(counts: &BiasCounts, predicate: &str, object: &str) -> Result<f64> {
    let total = counts.object_total(object);
    if total == 0 {
        return Err(HoiError::invalid("bias", format!("object {object} has no instances in the set")));
    }
    Ok(counts.count(predicate, object) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScenario {
    /// Drop every instance of the pair.
    Against,
    /// Drop every instance of the object except those of the pair.
    Towards,
}

/// Training set skewed against or towards `(predicate, object)`.
///
/// Instances are (triplet, predicate) units: a multi-label triplet loses the
/// removed predicates and disappears only when none remain.
pub fn make_bias_scenario(d: &Dataset, predicate: &str, object: &str, scenario: BiasScenario) -> Result<Dataset> {
    let occurs = d.triplets.iter().any(|t| t.object_class == object && t.predicates.contains(predicate));
    if !occurs {
        return Err(HoiError::invalid(
            "bias scenario",
            format!("pair ({predicate}, {object}) does not occur in the dataset"),
        ));
    }
    let triplets = d
        .triplets
        .iter()
        .filter_map(|t| {
            if t.object_class != object {
                return Some(t.clone());
            }
            let mut t = t.clone();
            match scenario {
                BiasScenario::Against => {
                    t.predicates.remove(predicate);
                }
                BiasScenario::Towards => t.predicates.retain(|p| p == predicate),
            }
            (!t.predicates.is_empty()).then_some(t)
        })
        .collect();
    d.with_triplets(triplets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub predicate: String,
    pub object: String,
    /// Bias per named set (e.g. `test`, `train`, `scenario`, `predictions`).
    pub bias: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<BiasScenario>,
    pub pairs: Vec<BiasEntry>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    use std::io::Write;
    let mut w = jsonl::create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HoiError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| HoiError::io(path, e))?;
    w.flush().map_err(|e| HoiError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(jsonl::open(path)?).map_err(|e| HoiError::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}
