//! Toy corpus with planted object clusters and geometry-driven predicates.
//!
//! Every image holds one human and one object. The object sits in one of
//! `buckets` directions around the human, and the predicate is a fixed
//! function of that direction and the object's cluster. Visual prototypes
//! are tight around per-cluster centres placed on a regular simplex; word
//! vectors are near one-hot, so only the prototypes reveal which objects
//! behave alike.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    BoundingBox, Dataset, Detection, DetectionSet, EmbeddingTable, ImageInfo, InteractionTriplet, VisualPrototypeTable,
    DEFAULT_HUMAN_CLASS,
};
use crate::error::{HoiError, Result};
use crate::eval::HoiClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clusters: usize,
    pub objects_per_cluster: usize,
    pub predicates: usize,
    /// Direction buckets around the human.
    pub buckets: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Withhold one (object, predicate) class per cluster of two or more
    /// objects from the training set.
    pub hold_out: bool,
    pub embedding_dim: usize,
    pub visual_dim: usize,
    pub feature_dim: usize,
    /// Per-coordinate noise on visual prototypes.
    pub prototype_noise: f64,
    /// Per-coordinate noise on word vectors.
    pub embedding_noise: f64,
    /// Length of the one-hot part of each word vector. Long vectors let the
    /// predicate head key on object identity.
    pub embedding_scale: f64,
    /// Maximum pixel offset applied to detected boxes.
    pub box_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clusters: 2,
            objects_per_cluster: 3,
            predicates: 4,
            buckets: 2,
            train_images: 500,
            test_images: 120,
            hold_out: true,
            embedding_dim: 16,
            visual_dim: 8,
            feature_dim: 8,
            prototype_noise: 0.05,
            embedding_noise: 0.02,
            embedding_scale: 16.0,
            box_jitter: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn num_objects(&self) -> usize {
        self.clusters * self.objects_per_cluster
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HoiError::Config(m));
        if self.clusters == 0 || self.objects_per_cluster == 0 || self.predicates == 0 || self.buckets == 0 {
            return bad("clusters, objects_per_cluster, predicates and buckets must be positive".into());
        }
        if self.embedding_dim < self.num_objects() + 1 {
            return bad(format!(
                "embedding_dim {} cannot hold {} objects plus the human token",
                self.embedding_dim,
                self.num_objects()
            ));
        }
        if self.visual_dim < self.clusters {
            return bad(format!("visual_dim {} is below the cluster count {}", self.visual_dim, self.clusters));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        for (name, v) in [
            ("prototype_noise", self.prototype_noise),
            ("embedding_noise", self.embedding_noise),
            ("embedding_scale", self.embedding_scale),
            ("box_jitter", self.box_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.box_jitter >= 20.0 {
            return bad("box_jitter must stay below 20 pixels".into());
        }
        Ok(())
    }
}

pub fn object_name(cluster: usize, index: usize) -> String {
    format!("obj_{cluster}_{index}")
}

pub fn predicate_name(p: usize) -> String {
    format!("pred_{p}")
}

/// Predicate carried by objects of `cluster` placed in direction `bucket`:
/// each cluster cycles through the predicates from its own offset.
pub fn planted_predicate(cfg: &SynthConfig, cluster: usize, bucket: usize) -> usize {
    let offset = cluster * (cfg.predicates / cfg.clusters).max(1);
    (offset + bucket) % cfg.predicates
}

/// Direction bucket of an object box relative to a human box.
pub fn direction_bucket(cfg: &SynthConfig, human: &BoundingBox, object: &BoundingBox) -> usize {
    let centre = |b: &BoundingBox| ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
    let (hx, hy) = centre(human);
    let (ox, oy) = centre(object);
    let step = 2.0 * PI / cfg.buckets as f64;
    let angle = (oy - hy).atan2(ox - hx).rem_euclid(2.0 * PI);
    ((angle + step / 2.0) / step).floor() as usize % cfg.buckets
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    /// Detector output for the test images, with image sizes attached.
    pub detections: DetectionSet,
    pub embeddings: EmbeddingTable,
    pub prototypes: VisualPrototypeTable,
    /// Planted cluster of each object.
    pub planted: BTreeMap<String, usize>,
    pub held_out: Vec<HoiClass>,
}

impl SyntheticCorpus {
    pub fn objects(&self) -> Vec<String> {
        self.planted.keys().cloned().collect()
    }

    /// Every (object, predicate) class the planted rule can produce.
    pub fn classes(&self) -> BTreeSet<HoiClass> {
        self.planted
            .iter()
            .flat_map(|(o, &c)| {
                (0..self.config.buckets)
                    .map(move |b| HoiClass::new(o.clone(), predicate_name(planted_predicate(&self.config, c, b))))
            })
            .collect()
    }
}

struct Scene {
    image: ImageInfo,
    human: BoundingBox,
    object: BoundingBox,
}

fn scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig, image_id: String, bucket: usize) -> Result<Scene> {
    let width = rng.gen_range(900.0..1100.0);
    let height = rng.gen_range(800.0..1000.0);
    let (hx, hy) = (width / 2.0 + rng.gen_range(-50.0..50.0), height / 2.0 + rng.gen_range(-50.0..50.0));
    let (hw, hh) = (rng.gen_range(100.0..160.0), rng.gen_range(200.0..300.0));
    let step = 2.0 * PI / cfg.buckets as f64;
    let spread = if cfg.buckets > 1 { (0.3f64).min(step * 0.4) } else { PI };
    let angle = step * bucket as f64 + rng.gen_range(-spread..spread);
    let distance = rng.gen_range(150.0..250.0);
    let (ox, oy) = (hx + distance * angle.cos(), hy + distance * angle.sin());
    let (ow, oh) = (rng.gen_range(50.0..110.0), rng.gen_range(50.0..110.0));
    Ok(Scene {
        image: ImageInfo::new(image_id, width, height)?,
        human: BoundingBox::new(hx - hw / 2.0, hy - hh / 2.0, hx + hw / 2.0, hy + hh / 2.0)?,
        object: BoundingBox::new(ox - ow / 2.0, oy - oh / 2.0, ox + ow / 2.0, oy + oh / 2.0)?,
    })
}

fn noisy_axis(rng: &mut ChaCha8Rng, dim: usize, hot: usize, scale: f64, noise: f64) -> Vec<f64> {
    (0..dim)
        .map(|i| if i == hot { scale } else { 0.0 } + if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 })
        .collect()
}

/// Vertex `c` of a regular simplex with `clusters` unit-length vertices.
fn simplex_vertex(dim: usize, clusters: usize, c: usize) -> Vec<f64> {
    if clusters == 1 {
        return (0..dim).map(|i| (i == 0) as u8 as f64).collect();
    }
    let k = clusters as f64;
    let scale = (k / (k - 1.0)).sqrt();
    (0..dim).map(|i| if i < clusters { ((i == c) as u8 as f64 - 1.0 / k) * scale } else { 0.0 }).collect()
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, j: f64) -> Result<BoundingBox> {
    let mut d = || if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
    BoundingBox::new(b.x1 + d(), b.y1 + d(), b.x2 + d(), b.y2 + d())
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut planted = BTreeMap::new();
    let mut objects = Vec::new();
    for c in 0..cfg.clusters {
        for j in 0..cfg.objects_per_cluster {
            planted.insert(object_name(c, j), c);
            objects.push((object_name(c, j), c));
        }
    }

    let mut embeddings = EmbeddingTable::new(cfg.embedding_dim);
    embeddings.insert(
        DEFAULT_HUMAN_CLASS,
        noisy_axis(&mut rng, cfg.embedding_dim, 0, cfg.embedding_scale, cfg.embedding_noise),
    )?;
    let mut prototypes = VisualPrototypeTable::new(cfg.visual_dim);
    for (i, (name, c)) in objects.iter().enumerate() {
        embeddings.insert(
            name.clone(),
            noisy_axis(&mut rng, cfg.embedding_dim, i + 1, cfg.embedding_scale, cfg.embedding_noise),
        )?;
        let centre = simplex_vertex(cfg.visual_dim, cfg.clusters, *c);
        let prototype = centre.iter().map(|v| v + rng.gen_range(-1.0..=1.0) * cfg.prototype_noise).collect();
        prototypes.insert(name.clone(), prototype)?;
    }

    // (object index, bucket) combinations withheld from training.
    let mut withheld = BTreeSet::new();
    let mut held_out = BTreeSet::new();
    if cfg.hold_out && cfg.objects_per_cluster >= 2 {
        for c in 0..cfg.clusters {
            let j = rng.gen_range(0..cfg.objects_per_cluster);
            let b = rng.gen_range(0..cfg.buckets);
            let p = planted_predicate(cfg, c, b);
            held_out.insert(HoiClass::new(object_name(c, j), predicate_name(p)));
            for bucket in 0..cfg.buckets {
                if planted_predicate(cfg, c, bucket) == p {
                    withheld.insert((c * cfg.objects_per_cluster + j, bucket));
                }
            }
        }
    }

    let feature = |rng: &mut ChaCha8Rng| (0..cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let triplet = |s: &Scene, o: usize, b: usize, f: Vec<f64>| InteractionTriplet {
        image_id: s.image.image_id.clone(),
        human_box: s.human,
        object_box: s.object,
        object_class: objects[o].0.clone(),
        predicates: BTreeSet::from([predicate_name(planted_predicate(cfg, objects[o].1, b))]),
        human_feature: f,
        synthetic: false,
    };

    let mut train_images = Vec::new();
    let mut train_triplets = Vec::new();
    let allowed: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|o| (0..cfg.buckets).map(move |b| (o, b)))
        .filter(|ob| !withheld.contains(ob))
        .collect();
    for i in 0..cfg.train_images {
        let (o, b) = allowed[rng.gen_range(0..allowed.len())];
        let s = scene(&mut rng, cfg, format!("train_{i:05}"), b)?;
        let f = feature(&mut rng);
        train_triplets.push(triplet(&s, o, b, f));
        train_images.push(s.image);
    }

    let mut test_images = Vec::new();
    let mut test_triplets = Vec::new();
    let mut detections = DetectionSet::default();
    let combos = objects.len() * cfg.buckets;
    for i in 0..cfg.test_images {
        let (o, b) = ((i % combos) / cfg.buckets, i % cfg.buckets);
        let s = scene(&mut rng, cfg, format!("test_{i:05}"), b)?;
        let f = feature(&mut rng);
        let human = Detection {
            image_id: s.image.image_id.clone(),
            bbox: jitter(&mut rng, &s.human, cfg.box_jitter)?,
            class_name: DEFAULT_HUMAN_CLASS.to_string(),
            confidence: rng.gen_range(0.95..=1.0),
            feature: Some(f.clone()),
        };
        let object = Detection {
            image_id: s.image.image_id.clone(),
            bbox: jitter(&mut rng, &s.object, cfg.box_jitter)?,
            class_name: objects[o].0.clone(),
            confidence: rng.gen_range(0.95..=1.0),
            feature: None,
        };
        detections.push(human);
        detections.push(object);
        detections.images.insert(s.image.image_id.clone(), s.image.clone());
        test_triplets.push(triplet(&s, o, b, f));
        test_images.push(s.image);
    }

    Ok(SyntheticCorpus {
        config: cfg.clone(),
        seed,
        train: Dataset::from_parts(train_images, train_triplets)?,
        test: Dataset::from_parts(test_images, test_triplets)?,
        detections,
        embeddings,
        prototypes,
        planted,
        held_out: held_out.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dataset_classes;
    use crate::funcsim::{cluster_vocabulary, FuncsimConfig};

    #[test]
    fn labels_follow_planted_rule() {
        let cfg = SynthConfig { predicates: 2, objects_per_cluster: 2, train_images: 200, ..Default::default() };
        let c = generate_synthetic(&cfg, 4).unwrap();
        for t in c.train.triplets.iter().chain(&c.test.triplets) {
            let b = direction_bucket(&cfg, &t.human_box, &t.object_box);
            let p = planted_predicate(&cfg, c.planted[&t.object_class], b);
            assert_eq!(t.predicates, BTreeSet::from([predicate_name(p)]));
        }
    }

    #[test]
    fn kmeans_recovers_planted_clusters() {
        for seed in 0..5 {
            let c = generate_synthetic(&SynthConfig::default(), seed).unwrap();
            let objects = c.objects();
            let cfg = FuncsimConfig { k: Some(2), seed, ..Default::default() };
            let a = cluster_vocabulary(objects.iter().map(String::as_str), &c.prototypes, &c.embeddings, &cfg).unwrap();
            for x in &objects {
                for y in &objects {
                    assert_eq!(a.cluster_of(x) == a.cluster_of(y), c.planted[x] == c.planted[y]);
                }
            }
        }
    }

    #[test]
    fn held_out_classes_absent_from_training_only() {
        let c = generate_synthetic(&SynthConfig::default(), 9).unwrap();
        assert_eq!(c.held_out.len(), 2);
        let train = dataset_classes(&c.train);
        let test = dataset_classes(&c.test);
        for h in &c.held_out {
            assert!(!train.contains(h));
            assert!(test.contains(h));
            assert!(train.iter().any(|t| t.object_class == h.object_class));
        }
        assert_eq!(c.train.triplets.len(), 500);
        assert_eq!(test, c.classes());
    }

    #[test]
    fn single_object_clusters_hold_nothing_out() {
        let cfg = SynthConfig { objects_per_cluster: 1, ..Default::default() };
        assert!(generate_synthetic(&cfg, 0).unwrap().held_out.is_empty());
    }

    #[test]
    fn detections_cover_test_pairs() {
        let c = generate_synthetic(&SynthConfig::default(), 1).unwrap();
        assert_eq!(c.detections.len(), 2 * c.test.triplets.len());
        for t in &c.test.triplets {
            let group = &c.detections.groups[&t.image_id];
            assert!(group.iter().all(|d| d.confidence > 0.9));
            assert!(crate::geometry::iou(&group[1].bbox, &t.object_box) > 0.8);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_synthetic(&cfg, 3).unwrap(), generate_synthetic(&cfg, 3).unwrap());
        assert_ne!(generate_synthetic(&cfg, 3).unwrap().train, generate_synthetic(&cfg, 4).unwrap().train);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = SynthConfig { embedding_dim: 3, ..Default::default() };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(HoiError::Config(_))));
    }
}
