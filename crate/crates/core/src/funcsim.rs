//! Functional similarity between object classes.
//!
//! Each class is represented by its visual prototype concatenated with its
//! word vector; classes sharing a cluster of these mixed vectors are treated
//! as functionally similar (people interact with them alike).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingTable, VisualPrototypeTable};
use crate::error::{HoiError, Result};
use crate::jsonl;
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedRepresentation {
    pub object_class: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgorithm {
    #[default]
    Kmeans,
    Agglomerative,
}

/// Parameters for clustering an object vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuncsimConfig {
    /// Number of clusters; `None` means `ceil(n / 6)`.
    pub k: Option<usize>,
    /// L2-normalize the visual and word parts separately before concatenating.
    pub normalize: bool,
    pub algorithm: ClusterAlgorithm,
    pub seed: u64,
    pub max_iter: usize,
    /// Independent k-means runs; the lowest objective wins.
    pub n_init: usize,
}

impl Default for FuncsimConfig {
    fn default() -> Self {
        FuncsimConfig {
            k: None,
            normalize: true,
            algorithm: ClusterAlgorithm::Kmeans,
            seed: 0,
            max_iter: 300,
            n_init: DEFAULT_N_INIT,
        }
    }
}

pub const DEFAULT_N_INIT: usize = 10;

pub fn default_k(vocabulary_size: usize) -> usize {
    vocabulary_size.div_ceil(6).max(1)
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

pub fn mixed_representation(
    class: &str,
    visuals: &VisualPrototypeTable,
    embeddings: &EmbeddingTable,
    normalize: bool,
) -> Result<MixedRepresentation> {
    let visual =
        visuals.get(class).ok_or_else(|| HoiError::Missing { key: class.to_string(), table: "visual prototype" })?;
    let word = embeddings.get(class).ok_or_else(|| HoiError::Missing { key: class.to_string(), table: "embedding" })?;
    let vector = if normalize {
        let mut v = l2_normalized(visual);
        v.extend(l2_normalized(word));
        v
    } else {
        visual.iter().chain(word).copied().collect()
    };
    Ok(MixedRepresentation { object_class: class.to_string(), vector })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[MixedRepresentation], k: usize) -> Result<()> {
    if k == 0 {
        return Err(HoiError::Config("number of clusters must be at least 1".into()));
    }
    if k > points.len() {
        return Err(HoiError::Config(format!("cannot form {k} clusters from {} classes", points.len())));
    }
    let dim = points[0].vector.len();
    for p in points {
        if p.vector.len() != dim {
            return Err(HoiError::Dimension {
                what: format!("mixed representation of {}", p.object_class),
                expected: dim,
                got: p.vector.len(),
            });
        }
    }
    let mut seen = HashMap::new();
    for p in points {
        if seen.insert(p.object_class.as_str(), ()).is_some() {
            return Err(HoiError::invalid("clustering", format!("duplicate class {}", p.object_class)));
        }
    }
    Ok(())
}

/// Partition of an object vocabulary into functional-similarity clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    k: usize,
    algorithm: ClusterAlgorithm,
    seed: Option<u64>,
    classes: Vec<String>,
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    /// Per class, its cluster mates by ascending distance (indices into `classes`).
    ranked_mates: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl ClusterAssignment {
    /// Builds an assignment from raw labels. Labels are renumbered densely in
    /// order of first appearance; empty labels are dropped.
    pub fn from_labels(
        points: &[MixedRepresentation],
        labels: &[usize],
        algorithm: ClusterAlgorithm,
        seed: Option<u64>,
    ) -> Self {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut dense = Vec::with_capacity(labels.len());
        let mut order = Vec::new();
        for &l in labels {
            let next = remap.len();
            let id = *remap.entry(l).or_insert_with(|| {
                order.push(l);
                next
            });
            dense.push(id);
        }
        let k = remap.len();
        let dim = points.first().map_or(0, |p| p.vector.len());
        let mut centroids = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&dense) {
            counts[l] += 1;
            for (c, x) in centroids[l].iter_mut().zip(&p.vector) {
                *c += x;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
        let ranked_mates = (0..points.len())
            .map(|i| {
                let mut mates: Vec<(f64, usize)> = (0..points.len())
                    .filter(|&j| j != i && dense[j] == dense[i])
                    .map(|j| (squared_distance(&points[i].vector, &points[j].vector), j))
                    .collect();
                mates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                mates.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        let classes: Vec<String> = points.iter().map(|p| p.object_class.clone()).collect();
        let index = classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        ClusterAssignment { k, algorithm, seed, classes, labels: dense, centroids, ranked_mates, index }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn algorithm(&self) -> ClusterAlgorithm {
        self.algorithm
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn cluster_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).map(|&i| self.labels[i])
    }

    pub fn contains(&self, class: &str) -> bool {
        self.index.contains_key(class)
    }

    /// Members of every cluster, each in vocabulary order.
    pub fn clusters(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (c, &l) in self.classes.iter().zip(&self.labels) {
            out[l].push(c.as_str());
        }
        out
    }

    pub fn cluster_size(&self, class: &str) -> Option<usize> {
        let l = self.cluster_of(class)?;
        Some(self.labels.iter().filter(|&&x| x == l).count())
    }

    /// Up to `r` other classes from the cluster of `class`, nearest first.
    pub fn neighbors(&self, class: &str, r: usize) -> Result<Vec<&str>> {
        let &i = self
            .index
            .get(class)
            .ok_or_else(|| HoiError::Missing { key: class.to_string(), table: "cluster assignment" })?;
        Ok(self.ranked_mates[i].iter().take(r).map(|&j| self.classes[j].as_str()).collect())
    }

    /// Sum of squared distances of `points` to their cluster centroids.
    pub fn objective(&self, points: &[MixedRepresentation]) -> f64 {
        points
            .iter()
            .map(|p| {
                let l = self.cluster_of(&p.object_class).expect("point belongs to assignment");
                squared_distance(&p.vector, &self.centroids[l])
            })
            .sum()
    }
}

/// Lloyd iterations of one k-means run.
#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub assignment: ClusterAssignment,
    /// Objective after each centroid update.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with squared Euclidean distance, seeded initialization
/// from `k` distinct points, and empty-cluster repair.
pub fn kmeans(points: &[MixedRepresentation], k: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment> {
    kmeans_run(points, k, seed, max_iter).map(|run| run.assignment)
}

/// Best of `n_init` runs seeded `seed`, `seed + 1`, ...; earlier runs win
/// ties. The assignment records `seed`.
pub fn kmeans_restarts(
    points: &[MixedRepresentation],
    k: usize,
    seed: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<ClusterAssignment> {
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for r in 0..n_init.max(1) as u64 {
        let run = kmeans_run(points, k, seed.wrapping_add(r), max_iter)?;
        let objective = run.assignment.objective(points);
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, run.assignment));
        }
    }
    let (_, best) = best.expect("at least one run");
    Ok(ClusterAssignment { seed: Some(seed), ..best })
}

pub fn kmeans_run(points: &[MixedRepresentation], k: usize, seed: u64, max_iter: usize) -> Result<KmeansRun> {
    check_points(points, k)?;
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, n, k).into_iter().map(|i| points[i].vector.clone()).collect();
    let dim = centroids[0].len();

    let mut labels: Option<Vec<usize>> = None;
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        let mut assigned = Vec::with_capacity(n);
        let mut dists = Vec::with_capacity(n);
        for p in points {
            let (c, d) = nearest(&p.vector, &centroids);
            assigned.push(c);
            dists.push(d);
        }
        repair_empty(&mut assigned, &mut dists, &mut centroids, points);
        if labels.as_ref() == Some(&assigned) {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assigned) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(&p.vector) {
                *s += x;
            }
        }
        for ((centroid, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            *centroid = sum.into_iter().map(|s| s / count as f64).collect();
        }
        objective.push(points.iter().zip(&assigned).map(|(p, &c)| squared_distance(&p.vector, &centroids[c])).sum());
        labels = Some(assigned);
    }
    let labels = labels.expect("at least one iteration");
    Ok(KmeansRun {
        assignment: ClusterAssignment::from_labels(points, &labels, ClusterAlgorithm::Kmeans, Some(seed)),
        objective,
        iterations,
    })
}

/// Moves, for each empty cluster, the point farthest from its centroid
/// (taken from a cluster with at least two members) into it.
fn repair_empty(assigned: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>], points: &[MixedRepresentation]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &c in assigned.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[assigned[i]] > 1 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("k <= n guarantees a donor cluster");
        counts[assigned[i]] -= 1;
        counts[empty] += 1;
        assigned[i] = empty;
        dists[i] = 0.0;
        centroids[empty] = points[i].vector.clone();
    }
}

/// Bottom-up average-linkage clustering on Euclidean distance. Ties are
/// broken by the lowest (i, j) cluster index pair.
pub fn agglomerative(points: &[MixedRepresentation], k: usize) -> Result<ClusterAssignment> {
    check_points(points, k)?;
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&points[i].vector, &points[j].vector).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && best.is_none_or(|(_, _, d)| dist[i][j] < d) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let (a, b, _) = best.expect("more than k active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for c in 0..n {
            if active[c] && c != a && c != b {
                let d = (na * dist[a][c] + nb * dist[b][c]) / (na + nb);
                dist[a][c] = d;
                dist[c][a] = d;
            }
        }
        size[a] += size[b];
        active[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        remaining -= 1;
    }
    Ok(ClusterAssignment::from_labels(points, &owner, ClusterAlgorithm::Agglomerative, None))
}

/// Mixed representations for `classes`, then clustering per `cfg`.
pub fn cluster_vocabulary<'a>(
    classes: impl IntoIterator<Item = &'a str>,
    visuals: &VisualPrototypeTable,
    embeddings: &EmbeddingTable,
    cfg: &FuncsimConfig,
) -> Result<ClusterAssignment> {
    let points = classes
        .into_iter()
        .map(|c| mixed_representation(c, visuals, embeddings, cfg.normalize))
        .collect::<Result<Vec<_>>>()?;
    if points.is_empty() {
        return Err(HoiError::Config("no classes to cluster".into()));
    }
    let k = cfg.k.unwrap_or_else(|| default_k(points.len()));
    match cfg.algorithm {
        ClusterAlgorithm::Kmeans => kmeans_restarts(&points, k, cfg.seed, cfg.max_iter, cfg.n_init),
        ClusterAlgorithm::Agglomerative => agglomerative(&points, k),
    }
}

/// On-disk form of a [`ClusterAssignment`] (`clusters.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: Option<u64>,
    pub algorithm: ClusterAlgorithm,
    pub clusters: Vec<Vec<String>>,
    /// Cluster mates of each class, nearest first.
    #[serde(default)]
    pub neighbors: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn to_file(&self, provenance: Option<Provenance>) -> ClusterFile {
        ClusterFile {
            provenance,
            k: self.k,
            seed: self.seed,
            algorithm: self.algorithm,
            clusters: self.clusters().into_iter().map(|c| c.into_iter().map(str::to_string).collect()).collect(),
            neighbors: self
                .classes
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), self.ranked_mates[i].iter().map(|&j| self.classes[j].clone()).collect()))
                .collect(),
            centroids: self.centroids.clone(),
        }
    }

    pub fn from_file(file: &ClusterFile) -> Result<Self> {
        if file.clusters.len() != file.k || file.clusters.iter().any(Vec::is_empty) {
            return Err(HoiError::invalid(
                "clusters file",
                format!("K = {} but {} non-empty clusters expected", file.k, file.clusters.len()),
            ));
        }
        let mut classes = Vec::new();
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        for (l, members) in file.clusters.iter().enumerate() {
            for c in members {
                if index.insert(c.clone(), classes.len()).is_some() {
                    return Err(HoiError::invalid("clusters file", format!("class {c} listed twice")));
                }
                classes.push(c.clone());
                labels.push(l);
            }
        }
        let mut ranked_mates = Vec::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            let mates: Vec<usize> = match file.neighbors.get(c) {
                Some(list) => list
                    .iter()
                    .map(|m| match index.get(m) {
                        Some(&j) if labels[j] == labels[i] && j != i => Ok(j),
                        _ => Err(HoiError::invalid(
                            "clusters file",
                            format!("neighbor {m} of {c} is not a cluster mate"),
                        )),
                    })
                    .collect::<Result<_>>()?,
                None => (0..classes.len()).filter(|&j| j != i && labels[j] == labels[i]).collect(),
            };
            ranked_mates.push(mates);
        }
        Ok(ClusterAssignment {
            k: file.k,
            algorithm: file.algorithm,
            seed: file.seed,
            classes,
            labels,
            centroids: file.centroids.clone(),
            ranked_mates,
            index,
        })
    }
}

pub fn save_clusters(path: &Path, assignment: &ClusterAssignment, provenance: Option<Provenance>) -> Result<()> {
    let mut w = jsonl::create(path)?;
    serde_json::to_writer_pretty(&mut w, &assignment.to_file(provenance)).map_err(|e| HoiError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| HoiError::io(path, e))?;
    w.flush().map_err(|e| HoiError::io(path, e))
}

pub fn load_clusters(path: &Path) -> Result<ClusterAssignment> {
    let file: ClusterFile = serde_json::from_reader(jsonl::open(path)?).map_err(|e| HoiError::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    ClusterAssignment::from_file(&file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(vectors: &[&[f64]]) -> Vec<MixedRepresentation> {
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| MixedRepresentation { object_class: format!("c{i}"), vector: v.to_vec() })
            .collect()
    }

    fn partition(a: &ClusterAssignment) -> Vec<Vec<String>> {
        let mut p: Vec<Vec<String>> = a
            .clusters()
            .into_iter()
            .map(|c| {
                let mut c: Vec<String> = c.into_iter().map(str::to_string).collect();
                c.sort();
                c
            })
            .collect();
        p.sort();
        p
    }

    fn table(rows: &[(&str, &[f64])]) -> crate::datamodel::VectorTable {
        let mut t = crate::datamodel::VectorTable::new(rows[0].1.len());
        for (k, v) in rows {
            t.insert(*k, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn mixed_concatenation() {
        let vis = table(&[("cup", &[1.0, 0.0]), ("mug", &[3.0, 4.0])]);
        let emb = table(&[("cup", &[0.0, 2.0]), ("mug", &[0.0, 2.0])]);
        assert_eq!(mixed_representation("cup", &vis, &emb, false).unwrap().vector, vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(mixed_representation("mug", &vis, &emb, true).unwrap().vector, vec![0.6, 0.8, 0.0, 1.0]);
    }

    #[test]
    fn mixed_missing_class_names_table() {
        let vis = table(&[("cup", &[1.0])]);
        let emb = table(&[("mug", &[1.0])]);
        let err = mixed_representation("cup", &vis, &emb, true).unwrap_err();
        assert!(matches!(err, HoiError::Missing { table: "embedding", .. }));
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let p = pts(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 3.0]]);
        let a = kmeans(&p, 1, 7, 100).unwrap();
        assert_eq!(a.k(), 1);
        assert_eq!(a.centroids()[0], vec![1.0, 1.0]);
    }

    #[test]
    fn kmeans_k_equals_n_gives_singletons() {
        let p = pts(&[&[0.0], &[1.0], &[5.0], &[9.0]]);
        let a = kmeans(&p, 4, 3, 100).unwrap();
        assert_eq!(a.k(), 4);
        assert_eq!(a.objective(&p), 0.0);
    }

    /// Best bipartition by exhaustive enumeration of the within-cluster sum.
    fn brute_force_bipartition(p: &[MixedRepresentation]) -> Vec<Vec<String>> {
        let n = p.len();
        let mut best: Option<(f64, usize)> = None;
        for mask in 1..(1usize << n) - 1 {
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<&MixedRepresentation> =
                    (0..n).filter(|i| ((mask >> i) & 1 == 1) == side).map(|i| &p[i]).collect();
                let dim = members[0].vector.len();
                let mean: Vec<f64> =
                    (0..dim).map(|d| members.iter().map(|m| m.vector[d]).sum::<f64>() / members.len() as f64).collect();
                sse += members.iter().map(|m| squared_distance(&m.vector, &mean)).sum::<f64>();
            }
            if best.is_none_or(|(s, _)| sse < s) {
                best = Some((sse, mask));
            }
        }
        let mask = best.unwrap().1;
        let mut parts = vec![Vec::new(), Vec::new()];
        for (i, m) in p.iter().enumerate() {
            parts[(mask >> i) & 1].push(m.object_class.clone());
        }
        for part in parts.iter_mut() {
            part.sort();
        }
        parts.sort();
        parts
    }

    #[test]
    fn kmeans_recovers_separated_groups_for_any_seed() {
        let p = pts(&[&[0.0, 0.0], &[0.5, 0.2], &[10.0, 10.0], &[10.3, 9.9]]);
        let expected = brute_force_bipartition(&p);
        assert_eq!(expected, vec![vec!["c0", "c1"], vec!["c2", "c3"]]);
        for seed in 0..32 {
            assert_eq!(partition(&kmeans(&p, 2, seed, 100).unwrap()), expected, "seed {seed}");
        }
    }

    #[test]
    fn restarts_keep_the_best_run() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[5.0, 0.0], &[5.0, 1.0], &[9.0, 0.5], &[2.0, 7.0]]);
        for seed in 0..10 {
            let single = kmeans(&p, 3, seed, 100).unwrap();
            assert_eq!(kmeans_restarts(&p, 3, seed, 100, 1).unwrap(), single);
            let best = kmeans_restarts(&p, 3, seed, 100, 8).unwrap();
            let runs: Vec<f64> = (0..8).map(|r| kmeans(&p, 3, seed + r, 100).unwrap().objective(&p)).collect();
            assert_eq!(best.objective(&p), runs.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(best.seed(), Some(seed));
        }
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let p = pts(&[&[0.0], &[1.0]]);
        assert!(matches!(kmeans(&p, 3, 0, 10), Err(HoiError::Config(_))));
        assert!(matches!(agglomerative(&p, 3), Err(HoiError::Config(_))));
        assert!(kmeans(&p, 0, 0, 10).is_err());
    }

    #[test]
    fn empty_cluster_repair_keeps_k_clusters() {
        // Duplicated points force coincident initial centroids for some seeds.
        let p = pts(&[&[0.0], &[0.0], &[0.0], &[1.0], &[7.0]]);
        for seed in 0..20 {
            let a = kmeans(&p, 3, seed, 50).unwrap();
            assert_eq!(a.k(), 3, "seed {seed}");
            assert!(a.clusters().iter().all(|c| !c.is_empty()));
        }
    }

    #[test]
    fn agglomerative_examples() {
        let p = pts(&[&[0.0], &[1.0], &[10.0]]);
        assert_eq!(partition(&agglomerative(&p, 3).unwrap()).len(), 3);
        assert_eq!(partition(&agglomerative(&p, 1).unwrap()), vec![vec!["c0", "c1", "c2"]]);
        assert_eq!(partition(&agglomerative(&p, 2).unwrap()), vec![vec!["c0", "c1"], vec!["c2"]]);
    }

    #[test]
    fn neighbors_within_cluster_nearest_first() {
        let names = ["glass", "bottle", "mug", "cup", "can", "horse"];
        let vecs: [&[f64]; 6] = [&[0.0, 0.0], &[0.4, 0.0], &[0.1, 0.0], &[0.2, 0.0], &[0.3, 0.0], &[50.0, 50.0]];
        let p: Vec<MixedRepresentation> = names
            .iter()
            .zip(vecs)
            .map(|(n, v)| MixedRepresentation { object_class: n.to_string(), vector: v.to_vec() })
            .collect();
        let a = kmeans(&p, 2, 1, 100).unwrap();
        assert_eq!(a.neighbors("glass", 4).unwrap(), vec!["mug", "cup", "can", "bottle"]);
        assert_eq!(a.neighbors("glass", 2).unwrap(), vec!["mug", "cup"]);
        assert!(a.neighbors("glass", 0).unwrap().is_empty());
        assert!(a.neighbors("horse", 5).unwrap().is_empty());
        assert!(a.neighbors("zebra", 1).is_err());
    }

    #[test]
    fn cluster_file_round_trip() {
        let p = pts(&[&[0.0], &[0.2], &[0.1], &[5.0], &[5.5]]);
        let a = kmeans(&p, 2, 9, 100).unwrap();
        let json = serde_json::to_string(&a.to_file(None)).unwrap();
        let back = ClusterAssignment::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn default_k_targets_six_members() {
        assert_eq!(default_k(1), 1);
        assert_eq!(default_k(6), 1);
        assert_eq!(default_k(7), 2);
        assert_eq!(default_k(545), 91);
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..14).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), n))
    }

    proptest! {
        #[test]
        fn kmeans_objective_non_increasing(raw in arb_points(), seed in 0u64..1000, k in 1usize..5) {
            let p: Vec<MixedRepresentation> = raw.iter().enumerate()
                .map(|(i, v)| MixedRepresentation { object_class: format!("c{i}"), vector: v.clone() })
                .collect();
            let k = k.min(p.len());
            let run = kmeans_run(&p, k, seed, 100).unwrap();
            for w in run.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", run.objective);
            }
            prop_assert_eq!(run.assignment.k(), k);
            let again = kmeans(&p, k, seed, 100).unwrap();
            prop_assert_eq!(&run.assignment, &again);
        }

        #[test]
        fn agglomerative_permutation_invariant(raw in arb_points(), k in 1usize..5, rot in 0usize..13) {
            let p: Vec<MixedRepresentation> = raw.iter().enumerate()
                .map(|(i, v)| MixedRepresentation { object_class: format!("c{i}"), vector: v.clone() })
                .collect();
            let k = k.min(p.len());
            let mut q = p.clone();
            q.rotate_left(rot % p.len());
            q.reverse();
            prop_assert_eq!(partition(&agglomerative(&p, k).unwrap()), partition(&agglomerative(&q, k).unwrap()));
        }

        #[test]
        fn neighbors_stay_in_cluster(raw in arb_points(), seed in 0u64..100, r in 0usize..6) {
            let p: Vec<MixedRepresentation> = raw.iter().enumerate()
                .map(|(i, v)| MixedRepresentation { object_class: format!("c{i}"), vector: v.clone() })
                .collect();
            let a = kmeans(&p, 2.min(p.len()), seed, 100).unwrap();
            for c in a.classes() {
                let n = a.neighbors(c, r).unwrap();
                prop_assert!(n.len() <= r);
                prop_assert_eq!(n.len(), r.min(a.cluster_size(c).unwrap() - 1));
                for m in n {
                    prop_assert_ne!(m, c.as_str());
                    prop_assert_eq!(a.cluster_of(m), a.cluster_of(c));
                }
            }
        }
    }
}
