//! Training-set cleaning: drop small classes, build within-class match
//! graphs from descriptor similarity, keep each class's largest connected
//! component and sample matched pairs from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::csvio::{save_label_table, write_text};
use crate::error::{Error, Result};
use crate::model::{ClassLabel, ImageId, LabelTable};
use crate::seed;
use crate::store::DescriptorStore;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;
/// Classes need at least this many images (size <= 3 is removed).
pub const DEFAULT_MIN_CLASS_SIZE: usize = 4;
pub const DEFAULT_MAX_PAIRS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Lexicographically smaller endpoint.
    pub a: ImageId,
    pub b: ImageId,
    pub similarity: f64,
}

/// Undirected similarity graph over one class's images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairGraph {
    pub vertices: Vec<ImageId>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanStats {
    pub classes_removed_small: usize,
    pub classes_removed_no_pairs: usize,
    pub images_kept: usize,
    pub classes_kept: usize,
    pub pairs_sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CleanDataset {
    pub kept: BTreeMap<ClassLabel, Vec<ImageId>>,
    pub pairs: Vec<(ImageId, ImageId)>,
    pub stats: CleanStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanParams {
    pub threshold: f64,
    pub min_size: usize,
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for CleanParams {
    fn default() -> Self {
        CleanParams {
            threshold: DEFAULT_MATCH_THRESHOLD,
            min_size: DEFAULT_MIN_CLASS_SIZE,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        UnionFind {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Keeps only classes with at least `min_size` images.
pub fn filter_small_classes(labels: &LabelTable, min_size: usize) -> LabelTable {
    let counts = class_sizes(labels);
    labels
        .iter()
        .filter(|(_, c)| counts[c] >= min_size)
        .map(|(id, c)| (id.clone(), *c))
        .collect()
}

fn class_sizes(labels: &LabelTable) -> BTreeMap<ClassLabel, usize> {
    let mut counts = BTreeMap::new();
    for c in labels.values() {
        *counts.entry(*c).or_insert(0) += 1;
    }
    counts
}

fn group_by_class(labels: &LabelTable) -> BTreeMap<ClassLabel, Vec<ImageId>> {
    let mut groups: BTreeMap<ClassLabel, Vec<ImageId>> = BTreeMap::new();
    for (id, c) in labels {
        groups.entry(*c).or_default().push(id.clone());
    }
    groups
}

/// All-pairs graph: edge iff `dot > threshold` (strict).
pub fn build_match_graph(
    images: &[ImageId],
    store: &DescriptorStore,
    threshold: f64,
) -> Result<PairGraph> {
    let mut sorted = images.to_vec();
    sorted.sort();
    sorted.dedup();
    let rows = sorted
        .iter()
        .map(|id| store.require(id))
        .collect::<Result<Vec<_>>>()?;
    let mut edges = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let sim: f64 = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            if sim > threshold {
                edges.push(Edge {
                    a: sorted[i].clone(),
                    b: sorted[j].clone(),
                    similarity: sim,
                });
            }
        }
    }
    Ok(PairGraph {
        vertices: sorted,
        edges,
    })
}

/// Vertex set of the largest component among vertices with at least one edge.
///
/// Ties go to the component holding the smallest id. No edges gives an empty set.
pub fn max_connected_component(graph: &PairGraph) -> BTreeSet<ImageId> {
    let mut vertices: Vec<&ImageId> = graph.vertices.iter().collect();
    for e in &graph.edges {
        vertices.push(&e.a);
        vertices.push(&e.b);
    }
    vertices.sort();
    vertices.dedup();
    let index = |id: &ImageId| vertices.binary_search(&id).unwrap();

    let mut uf = UnionFind::new(vertices.len());
    let mut touched = vec![false; vertices.len()];
    for e in &graph.edges {
        let (a, b) = (index(&e.a), index(&e.b));
        touched[a] = true;
        touched[b] = true;
        uf.union(a, b);
    }
    // Vertices are sorted, so the first member seen is the component's smallest id.
    let mut best: Option<(usize, usize)> = None;
    let mut seen_roots = BTreeSet::new();
    for (v, _) in touched.iter().enumerate().filter(|(_, t)| **t) {
        let root = uf.find(v);
        if !seen_roots.insert(root) {
            continue;
        }
        let size = uf.size[root];
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((root, size));
        }
    }
    let Some((root, _)) = best else {
        return BTreeSet::new();
    };
    (0..vertices.len())
        .filter(|&v| touched[v] && uf.find(v) == root)
        .map(|v| vertices[v].clone())
        .collect()
}

/// Uniform sample without replacement of `min(|edges|, max_pairs)` edges via a
/// seeded partial Fisher-Yates shuffle over the edges sorted by endpoints.
/// The sample is returned sorted.
pub fn sample_pairs(edges: &[Edge], max_pairs: usize, seed: u64) -> Vec<(ImageId, ImageId)> {
    let mut pool: Vec<(ImageId, ImageId)> =
        edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
    pool.sort();
    let take = pool.len().min(max_pairs);
    let mut rng = seed::rng(seed);
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool.sort();
    pool
}

enum ClassOutcome {
    NoPairs,
    Kept(Vec<ImageId>, Vec<(ImageId, ImageId)>),
}

/// Full cleaning pass; classes are processed in parallel and merged in label order.
pub fn clean_dataset(
    labels: &LabelTable,
    store: &DescriptorStore,
    params: &CleanParams,
) -> Result<CleanDataset> {
    if params.min_size == 0 || params.max_pairs == 0 {
        return Err(Error::Invalid(
            "min_size and max_pairs must be at least 1".into(),
        ));
    }
    let groups = group_by_class(labels);
    let total_classes = groups.len();
    let large: Vec<(ClassLabel, Vec<ImageId>)> = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= params.min_size)
        .collect();
    let classes_removed_small = total_classes - large.len();

    let outcomes = large
        .par_iter()
        .map(|(class, members)| {
            let graph = build_match_graph(members, store, params.threshold)?;
            let component = max_connected_component(&graph);
            if component.is_empty() {
                return Ok((*class, ClassOutcome::NoPairs));
            }
            let edges: Vec<Edge> = graph
                .edges
                .into_iter()
                .filter(|e| component.contains(&e.a))
                .collect();
            let class_seed = seed::mix(seed::derive(params.seed, &["clean"]), class.0);
            let pairs = sample_pairs(&edges, params.max_pairs, class_seed);
            Ok((
                *class,
                ClassOutcome::Kept(component.into_iter().collect(), pairs),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = CleanDataset {
        stats: CleanStats {
            classes_removed_small,
            ..CleanStats::default()
        },
        ..CleanDataset::default()
    };
    for (class, outcome) in outcomes {
        match outcome {
            ClassOutcome::NoPairs => out.stats.classes_removed_no_pairs += 1,
            ClassOutcome::Kept(images, pairs) => {
                out.stats.images_kept += images.len();
                out.stats.classes_kept += 1;
                out.stats.pairs_sampled += pairs.len();
                out.pairs.extend(pairs);
                out.kept.insert(class, images);
            }
        }
    }
    Ok(out)
}

impl CleanDataset {
    pub fn kept_labels(&self) -> LabelTable {
        self.kept
            .iter()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (id.clone(), *c)))
            .collect()
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("id1,id2\n");
        for (a, b) in &self.pairs {
            let _ = writeln!(out, "{a},{b}");
        }
        out
    }

    pub fn stats_text(&self) -> String {
        let s = &self.stats;
        format!(
            "classes_removed_small={}\nclasses_removed_no_pairs={}\nimages_kept={}\nclasses_kept={}\npairs_sampled={}\n",
            s.classes_removed_small, s.classes_removed_no_pairs, s.images_kept, s.classes_kept, s.pairs_sampled
        )
    }

    /// Writes `kept_labels.csv`, `pairs.csv` and `clean_stats.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_label_table(&self.kept_labels(), dir.join("kept_labels.csv"))?;
        write_text(&dir.join("pairs.csv"), &self.pairs_csv())?;
        write_text(&dir.join("clean_stats.txt"), &self.stats_text())
    }
}
