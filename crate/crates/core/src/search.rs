//! Exact brute-force cosine kNN and class-score aggregation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::csvio::{parse_error, parse_id, read_records, write_text};
use crate::error::{Error, Result};
use crate::model::{ClassLabel, ImageId, LabelTable, Prediction, Submission};
use crate::store::DescriptorStore;

/// Neighbors retained per query.
pub const DEFAULT_K_STORE: usize = 10;
/// Neighbors that vote in the class aggregation.
pub const DEFAULT_K_AGG: usize = 5;
pub const NEIGHBORS_HEADER: [&str; 4] = ["query", "rank", "train", "similarity"];

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub train: ImageId,
    pub similarity: f64,
}

/// Neighbors of one query, by similarity descending then train id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: ImageId,
    pub neighbors: Vec<Neighbor>,
}

/// Query x train block sizes for the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileShape {
    pub queries: usize,
    pub train: usize,
}

impl Default for TileShape {
    fn default() -> Self {
        TileShape {
            queries: 1024,
            train: 8192,
        }
    }
}

/// Dot product of two stored rows accumulated in `f64`.
#[inline]
pub fn similarity(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Bounded top-k buffer kept sorted under the neighbor ordering.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, sim: f64, row: usize, train: &DescriptorStore) {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0)
                .then_with(|| train.id(a.1).cmp(train.id(b.1)))
        };
        if self.items.len() == self.k
            && cmp(&(sim, row), self.items.last().unwrap()) != Ordering::Less
        {
            return;
        }
        let pos = self
            .items
            .binary_search_by(|probe| cmp(probe, &(sim, row)))
            .unwrap_or_else(|p| p);
        self.items.insert(pos, (sim, row));
        self.items.truncate(self.k);
    }
}

/// Exact top-k by dot product for every test descriptor, in test store order.
pub fn knn_search(
    test: &DescriptorStore,
    train: &DescriptorStore,
    k: usize,
) -> Result<Vec<NeighborList>> {
    knn_search_tiled(test, train, k, TileShape::default())
}

/// [`knn_search`] with explicit tiling. Query tiles run in parallel; the
/// result does not depend on the tile shape.
pub fn knn_search_tiled(
    test: &DescriptorStore,
    train: &DescriptorStore,
    k: usize,
    tiles: TileShape,
) -> Result<Vec<NeighborList>> {
    if test.dim() != train.dim() {
        return Err(Error::DimMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    if k == 0 || tiles.queries == 0 || tiles.train == 0 {
        return Err(Error::Invalid("k and tile sizes must be positive".into()));
    }
    let query_rows: Vec<usize> = (0..test.len()).collect();
    let lists = query_rows
        .par_chunks(tiles.queries)
        .flat_map_iter(|chunk| {
            let mut heaps: Vec<TopK> = chunk.iter().map(|_| TopK::new(k)).collect();
            let mut start = 0;
            while start < train.len() {
                let end = (start + tiles.train).min(train.len());
                for (heap, &q) in heaps.iter_mut().zip(chunk) {
                    let qv = test.row(q);
                    for t in start..end {
                        heap.offer(similarity(qv, train.row(t)), t, train);
                    }
                }
                start = end;
            }
            chunk.iter().zip(heaps).map(|(&q, heap)| NeighborList {
                query: test.id(q).clone(),
                neighbors: heap
                    .items
                    .into_iter()
                    .map(|(similarity, t)| Neighbor {
                        train: train.id(t).clone(),
                        similarity,
                    })
                    .collect(),
            })
        })
        .collect();
    Ok(lists)
}

pub(crate) fn argmax_class(scores: &BTreeMap<ClassLabel, f64>) -> Option<(ClassLabel, f64)> {
    // BTreeMap iterates in ascending label order; strict > keeps the lowest label on ties.
    let mut best: Option<(ClassLabel, f64)> = None;
    for (&c, &s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best
}

fn accumulate(
    scores: &mut BTreeMap<ClassLabel, f64>,
    list: &NeighborList,
    labels: &LabelTable,
    k_agg: usize,
) -> Result<()> {
    for n in list.neighbors.iter().take(k_agg) {
        let label = labels
            .get(&n.train)
            .ok_or_else(|| Error::MissingId(n.train.clone()))?;
        *scores.entry(*label).or_insert(0.0) += n.similarity;
    }
    Ok(())
}

/// Class vote over the top `k_agg` neighbors: the class with the largest
/// summed similarity wins (lowest label on ties) and the sum is the confidence.
pub fn aggregate_topk(
    neighbors: &[NeighborList],
    labels: &LabelTable,
    k_agg: usize,
) -> Result<Submission> {
    aggregate_models(&[neighbors], labels, k_agg)
}

/// Like [`aggregate_topk`], summing class scores across several models'
/// neighbor lists. Output follows the first model's query order.
pub fn ensemble_aggregate(
    per_model: &[Vec<NeighborList>],
    labels: &LabelTable,
    k_agg: usize,
) -> Result<Submission> {
    let models: Vec<&[NeighborList]> = per_model.iter().map(Vec::as_slice).collect();
    aggregate_models(&models, labels, k_agg)
}

fn aggregate_models(
    per_model: &[&[NeighborList]],
    labels: &LabelTable,
    k_agg: usize,
) -> Result<Submission> {
    if k_agg == 0 {
        return Err(Error::Invalid("k_agg must be at least 1".into()));
    }
    let Some(first) = per_model.first() else {
        return Err(Error::Invalid("no neighbor lists to aggregate".into()));
    };
    let mut indexed: Vec<BTreeMap<&ImageId, &NeighborList>> = Vec::with_capacity(per_model.len());
    for model in per_model {
        let map: BTreeMap<&ImageId, &NeighborList> = model.iter().map(|l| (&l.query, l)).collect();
        if map.len() != model.len() {
            return Err(Error::Invalid("duplicate query in neighbor lists".into()));
        }
        indexed.push(map);
    }
    let ids: HashSet<&ImageId> = first.iter().map(|l| &l.query).collect();
    for map in &indexed[1..] {
        if map.len() != ids.len() || map.keys().any(|q| !ids.contains(q)) {
            return Err(Error::Invalid(
                "models cover different test image sets".into(),
            ));
        }
    }
    let mut rows = Vec::with_capacity(first.len());
    for list in first.iter() {
        let mut scores = BTreeMap::new();
        for map in &indexed {
            accumulate(&mut scores, map[&list.query], labels, k_agg)?;
        }
        let (label, confidence) = argmax_class(&scores)
            .ok_or_else(|| Error::Invalid(format!("no neighbors for query {}", list.query)))?;
        rows.push(Prediction::new(list.query.clone(), label, confidence));
    }
    Submission::new(rows)
}

pub fn neighbors_to_string(lists: &[NeighborList]) -> String {
    let mut out = String::from("query,rank,train,similarity\n");
    for list in lists {
        for (rank, n) in list.neighbors.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                list.query,
                rank + 1,
                n.train,
                n.similarity
            );
        }
    }
    out
}

pub fn save_neighbors(lists: &[NeighborList], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &neighbors_to_string(lists))
}

/// Reads neighbors CSV. Rows of one query must be contiguous with ranks 1, 2, ...
pub fn load_neighbors(path: impl AsRef<Path>) -> Result<Vec<NeighborList>> {
    let path = path.as_ref();
    let mut lists: Vec<NeighborList> = Vec::new();
    let mut seen = HashSet::new();
    for (line, record) in read_records(path, &NEIGHBORS_HEADER)? {
        let query = parse_id(path, line, &record[0])?;
        let rank: usize = record[1]
            .parse()
            .map_err(|_| parse_error(path, line, format!("invalid rank {:?}", &record[1])))?;
        let train = parse_id(path, line, &record[2])?;
        let similarity: f64 = record[3]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| {
                parse_error(path, line, format!("invalid similarity {:?}", &record[3]))
            })?;
        let continuing = lists.last().is_some_and(|l| l.query == query);
        if !continuing {
            if !seen.insert(query.clone()) {
                return Err(parse_error(
                    path,
                    line,
                    format!("rows for {query} are not contiguous"),
                ));
            }
            lists.push(NeighborList {
                query,
                neighbors: Vec::new(),
            });
        }
        let list = lists.last_mut().unwrap();
        if rank != list.neighbors.len() + 1 {
            return Err(parse_error(
                path,
                line,
                format!("expected rank {}, found {rank}", list.neighbors.len() + 1),
            ));
        }
        list.neighbors.push(Neighbor { train, similarity });
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ImageId {
        ImageId::new(s).unwrap()
    }

    fn train_ab() -> DescriptorStore {
        DescriptorStore::from_rows(
            2,
            vec![(id("b"), vec![0.0f32, 1.0]), (id("a"), vec![1.0, 0.0])],
        )
        .unwrap()
    }

    #[test]
    fn orthonormal_queries() {
        let test = DescriptorStore::from_rows(2, vec![(id("q"), vec![1.0f32, 0.0])]).unwrap();
        let out = knn_search(&test, &train_ab(), 2).unwrap();
        assert_eq!(
            out[0].neighbors[0],
            Neighbor {
                train: id("a"),
                similarity: 1.0
            }
        );
        assert_eq!(
            out[0].neighbors[1],
            Neighbor {
                train: id("b"),
                similarity: 0.0
            }
        );
    }

    #[test]
    fn diagonal_query_ties_by_id() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let test = DescriptorStore::from_rows(2, vec![(id("q"), vec![h, h])]).unwrap();
        let out = knn_search(&test, &train_ab(), 2).unwrap();
        let ids: Vec<&str> = out[0].neighbors.iter().map(|n| n.train.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!((out[0].neighbors[0].similarity - 0.70711).abs() < 1e-5);
        assert_eq!(
            out[0].neighbors[0].similarity,
            out[0].neighbors[1].similarity
        );
    }

    #[test]
    fn dim_mismatch() {
        let test = DescriptorStore::from_rows(3, vec![(id("q"), vec![1.0f32, 0.0, 0.0])]).unwrap();
        assert!(matches!(
            knn_search(&test, &train_ab(), 1),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn list(q: &str, ns: &[(&str, f64)]) -> NeighborList {
        NeighborList {
            query: id(q),
            neighbors: ns
                .iter()
                .map(|(t, s)| Neighbor {
                    train: id(t),
                    similarity: *s,
                })
                .collect(),
        }
    }

    fn table(rows: &[(&str, u64)]) -> LabelTable {
        rows.iter().map(|(i, c)| (id(i), ClassLabel(*c))).collect()
    }

    #[test]
    fn aggregate_hand_case() {
        let labels = table(&[("A", 1), ("B", 2), ("C", 1)]);
        let sub = aggregate_topk(
            &[list("q", &[("A", 0.9), ("B", 0.8), ("C", 0.7)])],
            &labels,
            3,
        )
        .unwrap();
        let g = sub.rows[0].guess.unwrap();
        assert_eq!(g.label, ClassLabel(1));
        assert!((g.confidence - 1.6).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_class_and_tie() {
        let labels = table(&[
            ("A", 4),
            ("B", 4),
            ("C", 4),
            ("D", 4),
            ("E", 4),
            ("X", 9),
            ("Y", 3),
        ]);
        let l = list(
            "q",
            &[
                ("A", 0.5),
                ("B", 0.4),
                ("C", 0.3),
                ("D", 0.2),
                ("E", 0.1),
                ("X", 0.9),
            ],
        );
        let g = aggregate_topk(&[l], &labels, 5).unwrap().rows[0]
            .guess
            .unwrap();
        assert_eq!(g.label, ClassLabel(4));
        assert!((g.confidence - 1.5).abs() < 1e-12);

        let tie = list("q", &[("X", 0.5), ("Y", 0.5)]);
        let g = aggregate_topk(&[tie], &labels, 2).unwrap().rows[0]
            .guess
            .unwrap();
        assert_eq!(g.label, ClassLabel(3));
    }

    #[test]
    fn aggregate_unlabeled_neighbor() {
        let err = aggregate_topk(&[list("q", &[("Z", 0.5)])], &LabelTable::new(), 5).unwrap_err();
        assert!(matches!(err, Error::MissingId(i) if i.as_str() == "Z"));
    }

    #[test]
    fn ensemble_cases() {
        let labels = table(&[("A", 1), ("B", 2), ("C", 1), ("D", 2)]);
        let m1 = vec![list("q", &[("A", 0.9), ("C", 0.7)])];
        let m2 = vec![list("q", &[("B", 0.9), ("D", 0.8)])];
        let g = ensemble_aggregate(&[m1.clone(), m2], &labels, 5)
            .unwrap()
            .rows[0]
            .guess
            .unwrap();
        assert_eq!(g.label, ClassLabel(2));
        assert!((g.confidence - 1.7).abs() < 1e-12);

        let single = ensemble_aggregate(std::slice::from_ref(&m1), &labels, 5).unwrap();
        assert_eq!(single, aggregate_topk(&m1, &labels, 5).unwrap());

        let seven = ensemble_aggregate(&vec![m1.clone(); 7], &labels, 5)
            .unwrap()
            .rows[0]
            .guess
            .unwrap();
        assert_eq!(seven.label, ClassLabel(1));
        assert!((seven.confidence - 7.0 * 1.6).abs() < 1e-12);

        let other = vec![list("r", &[("A", 0.9)])];
        assert!(ensemble_aggregate(&[m1, other], &labels, 5).is_err());
    }

    #[test]
    fn neighbors_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.csv");
        let lists = vec![
            list("q1", &[("A", 0.1 + 0.2), ("B", -0.5)]),
            list("q2", &[("C", 1.0)]),
        ];
        save_neighbors(&lists, &path).unwrap();
        assert_eq!(load_neighbors(&path).unwrap(), lists);

        std::fs::write(&path, "query,rank,train,similarity\nq,1,A,0.5\nq,3,B,0.4\n").unwrap();
        assert!(matches!(
            load_neighbors(&path),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
