//! Training-set expansion by substituting functionally similar objects.
//!
//! Each annotated triplet is followed by up to `r` copies that differ only in
//! `object_class`; boxes, human feature, predicates and image are shared.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, InteractionTriplet};
use crate::error::{HoiError, Result};
use crate::funcsim::ClusterAssignment;

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Maximum number of substitutes per triplet.
    pub r: usize,
    pub mark_synthetic: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig { r: DEFAULT_NEIGHBORS, mark_synthetic: true }
    }
}

/// Counts reported by the `augment` command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub originals: usize,
    pub synthetic: usize,
    /// Synthetic records per cluster id.
    pub per_cluster: BTreeMap<usize, usize>,
}

pub fn augment_dataset(d: &Dataset, clusters: &ClusterAssignment, cfg: &AugmentationConfig) -> Result<Dataset> {
    augment_with_summary(d, clusters, cfg).map(|(d, _)| d)
}

pub fn augment_with_summary(
    d: &Dataset,
    clusters: &ClusterAssignment,
    cfg: &AugmentationConfig,
) -> Result<(Dataset, AugmentSummary)> {
    let mut summary = AugmentSummary::default();
    let mut out = Vec::with_capacity(d.triplets.len() * (1 + cfg.r));
    for (i, t) in d.triplets.iter().enumerate() {
        let cluster = clusters.cluster_of(&t.object_class).ok_or_else(|| {
            HoiError::invalid(
                format!("triplet {i} (image {})", t.image_id),
                format!("object class {} is not in the cluster assignment", t.object_class),
            )
        })?;
        out.push(t.clone());
        if t.synthetic {
            continue;
        }
        summary.originals += 1;
        for substitute in clusters.neighbors(&t.object_class, cfg.r)? {
            out.push(InteractionTriplet {
                object_class: substitute.to_string(),
                synthetic: t.synthetic || cfg.mark_synthetic,
                ..t.clone()
            });
            summary.synthetic += 1;
            *summary.per_cluster.entry(cluster).or_default() += 1;
        }
    }
    Ok((d.with_triplets(out)?, summary))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::datamodel::{BoundingBox, ImageInfo};
    use crate::funcsim::{kmeans, MixedRepresentation};

    fn clusters() -> ClusterAssignment {
        let p: Vec<MixedRepresentation> =
            [("glass", 0.0), ("bottle", 0.1), ("mug", 0.2), ("cup", 0.3), ("can", 0.4), ("horse", 100.0)]
                .iter()
                .map(|(c, x)| MixedRepresentation { object_class: c.to_string(), vector: vec![*x] })
                .collect();
        kmeans(&p, 2, 0, 100).unwrap()
    }

    fn triplet(image: &str, object: &str, predicate: &str) -> InteractionTriplet {
        InteractionTriplet {
            image_id: image.into(),
            human_box: BoundingBox::new(1.0, 2.0, 30.0, 60.0).unwrap(),
            object_box: BoundingBox::new(20.0, 30.0, 35.0, 45.0).unwrap(),
            object_class: object.into(),
            predicates: BTreeSet::from([predicate.to_string()]),
            human_feature: vec![0.1, 0.2],
            synthetic: false,
        }
    }

    fn dataset(triplets: Vec<InteractionTriplet>) -> Dataset {
        let images = vec![ImageInfo::new("a", 100.0, 100.0).unwrap(), ImageInfo::new("b", 50.0, 50.0).unwrap()];
        Dataset::from_parts(images, triplets).unwrap()
    }

    #[test]
    fn zero_neighbors_is_identity() {
        let d = dataset(vec![triplet("a", "glass", "hold"), triplet("b", "horse", "ride")]);
        let cfg = AugmentationConfig { r: 0, ..Default::default() };
        assert_eq!(augment_dataset(&d, &clusters(), &cfg).unwrap(), d);
    }

    #[test]
    fn glass_expands_to_its_cluster() {
        let d = dataset(vec![triplet("a", "glass", "hold")]);
        let cfg = AugmentationConfig { r: 4, ..Default::default() };
        let out = augment_dataset(&d, &clusters(), &cfg).unwrap();
        assert_eq!(out.triplets.len(), 5);
        let objects: BTreeSet<&str> = out.triplets.iter().map(|t| t.object_class.as_str()).collect();
        assert_eq!(objects, BTreeSet::from(["glass", "bottle", "mug", "cup", "can"]));
        for t in &out.triplets {
            assert_eq!(t.human_box, d.triplets[0].human_box);
            assert_eq!(t.object_box, d.triplets[0].object_box);
            assert_eq!(t.human_feature, d.triplets[0].human_feature);
            assert_eq!(t.predicates, d.triplets[0].predicates);
            assert_eq!(t.image_id, "a");
        }
        assert!(!out.triplets[0].synthetic);
        assert!(out.triplets[1..].iter().all(|t| t.synthetic));
    }

    #[test]
    fn singleton_cluster_has_no_substitutes() {
        let d = dataset(vec![triplet("b", "horse", "ride")]);
        let out = augment_dataset(&d, &clusters(), &AugmentationConfig::default()).unwrap();
        assert_eq!(out.triplets.len(), 1);
    }

    #[test]
    fn unclustered_class_is_an_error() {
        let d = dataset(vec![triplet("b", "zebra", "ride")]);
        assert!(augment_dataset(&d, &clusters(), &AugmentationConfig::default()).is_err());
    }

    #[test]
    fn output_size_and_projection_invariants() {
        let c = clusters();
        let d = dataset(vec![
            triplet("a", "glass", "hold"),
            triplet("a", "cup", "drink_with"),
            triplet("b", "horse", "ride"),
        ]);
        for r in 0..7 {
            let cfg = AugmentationConfig { r, ..Default::default() };
            let out = augment_dataset(&d, &c, &cfg).unwrap();
            let expected: usize =
                d.triplets.iter().map(|t| 1 + r.min(c.cluster_size(&t.object_class).unwrap() - 1)).sum();
            assert_eq!(out.triplets.len(), expected);
            let noop = augment_dataset(&d, &c, &AugmentationConfig { r: 0, ..Default::default() }).unwrap();
            assert_eq!(augment_dataset(&noop, &c, &cfg).unwrap(), out);
            let mut cursor = 0;
            for orig in &d.triplets {
                let n = 1 + r.min(c.cluster_size(&orig.object_class).unwrap() - 1);
                for t in &out.triplets[cursor..cursor + n] {
                    assert_eq!(
                        (&t.human_box, &t.object_box, &t.human_feature, &t.predicates),
                        (&orig.human_box, &orig.object_box, &orig.human_feature, &orig.predicates)
                    );
                }
                cursor += n;
            }
        }
    }

    #[test]
    fn summary_counts() {
        let d = dataset(vec![triplet("a", "glass", "hold"), triplet("b", "horse", "ride")]);
        let (_, s) = augment_with_summary(&d, &clusters(), &AugmentationConfig { r: 2, ..Default::default() }).unwrap();
        assert_eq!(s.originals, 2);
        assert_eq!(s.synthetic, 2);
        assert_eq!(s.per_cluster.values().sum::<usize>(), 2);
    }
}
