//! Inference: pair confident humans with confident objects, score every
//! predicate with the classifier, then suppress duplicates class by class.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{BoundingBox, Detection, DetectionSet, EmbeddingTable, ImageInfo, DEFAULT_HUMAN_CLASS};
use crate::error::{HoiError, Result};
use crate::geometry::{iou, union_box};
use crate::jsonl;
use crate::nn::{assemble_parts, forward, PredicateModel};
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiDetection {
    pub image_id: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: String,
    pub predicate: String,
    pub score: f64,
}

impl HoiDetection {
    pub fn union_box(&self) -> BoundingBox {
        union_box(&self.human_box, &self.object_box)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Detections must score strictly above this to be paired.
    pub det_threshold: f64,
    /// Predicates with probability at or above this are reported.
    pub predicate_threshold: f64,
    pub nms_iou: f64,
    pub human_token: String,
    pub human_classes: BTreeSet<String>,
    /// Also pair humans with other human detections.
    pub human_object_pairs: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            det_threshold: 0.9,
            predicate_threshold: 0.5,
            nms_iou: 0.5,
            human_token: DEFAULT_HUMAN_CLASS.to_string(),
            human_classes: BTreeSet::from([DEFAULT_HUMAN_CLASS.to_string()]),
            human_object_pairs: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("det_threshold", self.det_threshold),
            ("predicate_threshold", self.predicate_threshold),
            ("nms_iou", self.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HoiError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Every (human, object) pair of distinct detections above the confidence
/// threshold, humans in input order, objects in input order.
pub fn build_pairs<'a>(dets: &'a [Detection], cfg: &InferenceConfig) -> Vec<(&'a Detection, &'a Detection)> {
    let confident: Vec<(usize, &Detection)> =
        dets.iter().enumerate().filter(|(_, d)| d.confidence > cfg.det_threshold).collect();
    let is_human = |d: &Detection| cfg.human_classes.contains(&d.class_name);
    let mut pairs = Vec::new();
    for &(hi, h) in confident.iter().filter(|(_, d)| is_human(d)) {
        for &(oi, o) in &confident {
            if oi == hi || (is_human(o) && !cfg.human_object_pairs) {
                continue;
            }
            pairs.push((h, o));
        }
    }
    pairs
}

/// One detection per predicate whose probability reaches the threshold,
/// scored `probability * human confidence * object confidence`.
pub fn score_pair(
    m: &PredicateModel,
    pair: (&Detection, &Detection),
    embeddings: &EmbeddingTable,
    img: &ImageInfo,
    cfg: &InferenceConfig,
) -> Result<Vec<HoiDetection>> {
    let (h, o) = pair;
    let feature = h
        .feature
        .as_deref()
        .ok_or_else(|| HoiError::invalid(format!("image {}", h.image_id), "human detection has no feature"))?;
    let mut x = assemble_parts(&h.bbox, &o.bbox, &o.class_name, feature, embeddings, img, &cfg.human_token)?;
    m.ablation.apply(&mut x, m.dims.embedding_dim);
    let probs = forward(m, &x)?;
    Ok(probs
        .iter()
        .zip(&m.predicates)
        .filter(|(p, _)| **p >= cfg.predicate_threshold)
        .map(|(p, predicate)| HoiDetection {
            image_id: h.image_id.clone(),
            human_box: h.bbox,
            object_box: o.bbox,
            object_class: o.class_name.clone(),
            predicate: predicate.clone(),
            score: p * h.confidence * o.confidence,
        })
        .collect())
}

/// Indices of `cands` ordered by descending score, ties by input position.
fn rank_order(cands: &[HoiDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].score.total_cmp(&cands[a].score).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression run separately for every
/// (object class, predicate) over union boxes. A candidate is dropped when
/// its union box overlaps an already kept one of its class by more than
/// `nms_iou`. Output is ordered by descending score.
pub fn nms(cands: &[HoiDetection], nms_iou: f64) -> Vec<HoiDetection> {
    nms_indices(cands, nms_iou).into_iter().map(|i| cands[i].clone()).collect()
}

/// Positions in `cands` of the detections [`nms`] keeps, in its output order.
pub fn nms_indices(cands: &[HoiDetection], nms_iou: f64) -> Vec<usize> {
    let unions: Vec<BoundingBox> = cands.iter().map(HoiDetection::union_box).collect();
    let mut kept_by_class: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    for i in rank_order(cands) {
        let key = (cands[i].object_class.as_str(), cands[i].predicate.as_str());
        let kept = kept_by_class.entry(key).or_default();
        if kept.iter().all(|&k| iou(&unions[k], &unions[i]) <= nms_iou) {
            kept.push(i);
            out.push(i);
        }
    }
    out
}

/// Pairs, scores and suppresses one image's detections.
pub fn detect_image(
    dets: &[Detection],
    m: &PredicateModel,
    embeddings: &EmbeddingTable,
    img: &ImageInfo,
    cfg: &InferenceConfig,
) -> Result<Vec<HoiDetection>> {
    let mut cands = Vec::new();
    for pair in build_pairs(dets, cfg) {
        cands.extend(score_pair(m, pair, embeddings, img, cfg)?);
    }
    Ok(nms(&cands, cfg.nms_iou))
}

/// Runs [`detect_image`] over every image of `set` in file order. Image sizes
/// come from `images`, falling back to sizes carried by the detections.
pub fn detect_all(
    set: &DetectionSet,
    images: &HashMap<String, ImageInfo>,
    m: &PredicateModel,
    embeddings: &EmbeddingTable,
    cfg: &InferenceConfig,
) -> Result<Vec<HoiDetection>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (image_id, dets) in &set.groups {
        let img = images
            .get(image_id)
            .or_else(|| set.images.get(image_id))
            .ok_or_else(|| HoiError::invalid(format!("image {image_id}"), "image size unknown"))?;
        out.extend(detect_image(dets, m, embeddings, img, cfg)?);
    }
    Ok(out)
}

pub fn write_hoi_detections<W: Write>(writer: W, dets: &[HoiDetection], provenance: Option<&Provenance>) -> Result<()> {
    jsonl::write_records(writer, provenance, dets)
}

pub fn save_hoi_detections(path: &Path, dets: &[HoiDetection], provenance: Option<&Provenance>) -> Result<()> {
    write_hoi_detections(jsonl::create(path)?, dets, provenance)
}

pub fn read_hoi_detections<R: BufRead>(reader: R, source: &str) -> Result<Vec<HoiDetection>> {
    let mut out = Vec::new();
    jsonl::for_each_record(reader, source, |line, d: HoiDetection| {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(HoiError::invalid(format!("{source}:{line}"), format!("score {} outside [0, 1]", d.score)));
        }
        out.push(d);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_hoi_detections(path: &Path) -> Result<Vec<HoiDetection>> {
    read_hoi_detections(jsonl::open(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::VectorTable;
    use crate::nn::ModelDims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(class: &str, conf: f64, b: BoundingBox) -> Detection {
        Detection {
            image_id: "img".into(),
            bbox: b,
            class_name: class.into(),
            confidence: conf,
            feature: if class == "person" { Some(vec![0.1, 0.2]) } else { None },
        }
    }

    fn cand(class: &str, predicate: &str, score: f64, h: BoundingBox, o: BoundingBox) -> HoiDetection {
        HoiDetection {
            image_id: "img".into(),
            human_box: h,
            object_box: o,
            object_class: class.into(),
            predicate: predicate.into(),
            score,
        }
    }

    #[test]
    fn pairing_counts() {
        let cfg = InferenceConfig::default();
        let objects = vec![det("cup", 0.95, bx(0.0, 0.0, 5.0, 5.0)), det("horse", 0.99, bx(1.0, 1.0, 9.0, 9.0))];
        assert!(build_pairs(&objects, &cfg).is_empty());

        let mut dets = vec![
            det("person", 0.95, bx(0.0, 0.0, 10.0, 10.0)),
            det("person", 0.97, bx(5.0, 5.0, 20.0, 20.0)),
            det("cup", 0.95, bx(0.0, 0.0, 5.0, 5.0)),
            det("horse", 0.99, bx(1.0, 1.0, 9.0, 9.0)),
            det("bottle", 0.91, bx(3.0, 3.0, 6.0, 6.0)),
        ];
        assert_eq!(build_pairs(&dets, &cfg).len(), 6);
        let with_humans = InferenceConfig { human_object_pairs: true, ..cfg.clone() };
        assert_eq!(build_pairs(&dets, &with_humans).len(), 8);
        dets[4].confidence = 0.85;
        assert_eq!(build_pairs(&dets, &cfg).len(), 4);
        assert!(build_pairs(&[], &cfg).is_empty());
    }

    fn embeddings() -> VectorTable {
        let mut t = VectorTable::new(2);
        t.insert("person", vec![1.0, 0.0]).unwrap();
        t.insert("cup", vec![0.0, 1.0]).unwrap();
        t
    }

    fn zero_model(p: usize) -> PredicateModel {
        let dims = ModelDims { embedding_dim: 2, feature_dim: 2, hidden1: 3, hidden2: 3, predicates: p };
        PredicateModel::zeros(dims, (0..p).map(|i| format!("p{i}")).collect(), "person")
    }

    #[test]
    fn zero_model_scores_every_predicate_at_half() {
        let img = ImageInfo::new("img", 100.0, 100.0).unwrap();
        let h = det("person", 1.0, bx(10.0, 10.0, 40.0, 90.0));
        let o = det("cup", 1.0, bx(30.0, 40.0, 45.0, 55.0));
        let cfg = InferenceConfig::default();
        let out = score_pair(&zero_model(3), (&h, &o), &embeddings(), &img, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|d| d.score == 0.5));
        let strict = InferenceConfig { predicate_threshold: 1.0, ..cfg };
        assert!(score_pair(&zero_model(3), (&h, &o), &embeddings(), &img, &strict).unwrap().is_empty());

        let unknown = det("kite", 1.0, bx(30.0, 40.0, 45.0, 55.0));
        assert!(score_pair(&zero_model(3), (&h, &unknown), &embeddings(), &img, &InferenceConfig::default()).is_err());
    }

    #[test]
    fn detect_image_examples() {
        let img = ImageInfo::new("img", 100.0, 100.0).unwrap();
        let cfg = InferenceConfig::default();
        assert!(detect_image(&[], &zero_model(2), &embeddings(), &img, &cfg).unwrap().is_empty());
        let dets = vec![det("person", 1.0, bx(10.0, 10.0, 40.0, 90.0)), det("cup", 1.0, bx(30.0, 40.0, 45.0, 55.0))];
        let out = detect_image(&dets, &zero_model(2), &embeddings(), &img, &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|d| d.score == 0.5));
    }

    #[test]
    fn nms_is_class_wise() {
        let (h, o) = (bx(0.0, 0.0, 10.0, 10.0), bx(5.0, 5.0, 15.0, 15.0));
        let same = vec![cand("cup", "hold", 0.8, h, o), cand("cup", "hold", 0.9, h, o)];
        let out = nms(&same, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
        let different = vec![cand("cup", "hold", 0.8, h, o), cand("cup", "drink_with", 0.9, h, o)];
        assert_eq!(nms(&different, 0.5).len(), 2);
    }

    /// Greedy NMS output is the unique subset S where a candidate belongs to S
    /// iff no higher-ranked member of S in its class overlaps it too much.
    /// Found here by trying every subset.
    fn brute_force_nms(cands: &[HoiDetection], thr: f64) -> BTreeSet<usize> {
        let n = cands.len();
        let rank = {
            let order = rank_order(cands);
            let mut r = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                r[i] = pos;
            }
            r
        };
        let suppresses = |j: usize, i: usize| {
            rank[j] < rank[i]
                && cands[j].object_class == cands[i].object_class
                && cands[j].predicate == cands[i].predicate
                && iou(&cands[j].union_box(), &cands[i].union_box()) > thr
        };
        let mut found = Vec::new();
        for mask in 0u32..(1 << n) {
            let member = |i: usize| mask >> i & 1 == 1;
            let consistent = (0..n).all(|i| member(i) == !(0..n).any(|j| member(j) && suppresses(j, i)));
            if consistent {
                found.push((0..n).filter(|&i| member(i)).collect::<BTreeSet<_>>());
            }
        }
        assert_eq!(found.len(), 1, "fixed point must be unique");
        found.pop().unwrap()
    }

    pub(crate) fn random_candidates(rng: &mut ChaCha8Rng, n: usize) -> Vec<HoiDetection> {
        let b = |rng: &mut ChaCha8Rng| {
            let (x, y) = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
            bx(x, y, x + rng.gen_range(5.0..30.0), y + rng.gen_range(5.0..30.0))
        };
        (0..n)
            .map(|_| {
                let h = b(rng);
                let o = b(rng);
                let class = ["cup", "horse"][rng.gen_range(0..2)];
                let pred = ["hold", "ride"][rng.gen_range(0..2)];
                // Coarse scores so ties occur.
                let score = rng.gen_range(1..8) as f64 / 8.0;
                cand(class, pred, score, h, o)
            })
            .collect()
    }

    #[test]
    fn greedy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(0..=10);
            let cands = random_candidates(&mut rng, n);
            let thr = [0.3, 0.5, 0.7][rng.gen_range(0..3)];
            let kept = nms(&cands, thr);
            let expected = brute_force_nms(&cands, thr);
            let order = rank_order(&cands);
            let expected_in_rank: Vec<&HoiDetection> =
                order.iter().filter(|i| expected.contains(i)).map(|&i| &cands[i]).collect();
            assert_eq!(kept.iter().collect::<Vec<_>>(), expected_in_rank);
        }
    }

    proptest! {
        #[test]
        fn nms_output_is_suppressed_subset(seed in 0u64..10_000, n in 0usize..12, thr in 0.1..0.9f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cands = random_candidates(&mut rng, n);
            let kept = nms(&cands, thr);
            for k in &kept {
                prop_assert!(cands.contains(k));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    if a.object_class == b.object_class && a.predicate == b.predicate {
                        prop_assert!(iou(&a.union_box(), &b.union_box()) <= thr);
                    }
                }
            }
        }

        #[test]
        fn raising_threshold_never_adds(seed in 0u64..1000, lo in 0.0..1.0f64, delta in 0.0..1.0f64) {
            let dims = ModelDims { embedding_dim: 2, feature_dim: 2, hidden1: 4, hidden2: 3, predicates: 4 };
            let m = PredicateModel::init(dims, (0..4).map(|i| format!("p{i}")).collect(), "person", seed);
            let img = ImageInfo::new("img", 100.0, 100.0).unwrap();
            let h = det("person", 1.0, bx(10.0, 10.0, 40.0, 90.0));
            let o = det("cup", 1.0, bx(30.0, 40.0, 45.0, 55.0));
            let hi = (lo + delta).min(1.0);
            let a = score_pair(&m, (&h, &o), &embeddings(), &img, &InferenceConfig { predicate_threshold: lo, ..Default::default() }).unwrap();
            let b = score_pair(&m, (&h, &o), &embeddings(), &img, &InferenceConfig { predicate_threshold: hi, ..Default::default() }).unwrap();
            prop_assert!(b.iter().all(|d| a.contains(d)));
        }
    }

    #[test]
    fn detections_jsonl_round_trip() {
        let c = vec![cand("cup", "hold", 0.25, bx(0.0, 0.0, 1.0, 1.0), bx(1.0, 1.0, 2.0, 2.0))];
        let mut buf = Vec::new();
        write_hoi_detections(&mut buf, &c, None).unwrap();
        assert_eq!(read_hoi_detections(buf.as_slice(), "mem").unwrap(), c);
    }
}
