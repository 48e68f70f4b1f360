//! Abundance data, taxonomic trees and their file formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed abundances of the distinct taxa in a sample.
///
/// Abundances are stored sorted in descending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionData {
    abundances: Vec<u64>,
    labels: Vec<String>,
    n: u64,
}

impl PartitionData {
    /// Builds a partition from positive abundances; zero entries are rejected.
    pub fn from_abundances(abundances: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut v: Vec<u64> = abundances.into_iter().collect();
        if v.contains(&0) {
            return Err(Error::Domain("abundances must be positive".into()));
        }
        v.sort_unstable_by(|a, b| b.cmp(a));
        let n = v.iter().try_fold(0u64, |acc, &x| acc.checked_add(x));
        let n = n.ok_or_else(|| Error::Domain("total count overflows".into()))?;
        let labels = (1..=v.len()).map(|i| format!("t{i}")).collect();
        Ok(PartitionData {
            abundances: v,
            labels,
            n,
        })
    }

    fn from_labelled(mut rows: Vec<(String, u64)>) -> Result<Self> {
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let n = rows
            .iter()
            .try_fold(0u64, |acc, r| acc.checked_add(r.1))
            .ok_or_else(|| Error::Domain("total count overflows".into()))?;
        let (labels, abundances) = rows.into_iter().unzip();
        Ok(PartitionData {
            abundances,
            labels,
            n,
        })
    }

    /// Sample size `n`.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of distinct taxa `k`.
    pub fn k(&self) -> u64 {
        self.abundances.len() as u64
    }

    pub fn abundances(&self) -> &[u64] {
        &self.abundances
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Frequency counts `r -> m_r`.
    pub fn freq_counts(&self) -> BTreeMap<u64, u64> {
        let mut m = BTreeMap::new();
        for &a in &self.abundances {
            *m.entry(a).or_insert(0) += 1;
        }
        m
    }

    /// Writes `taxon,count` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["taxon", "count"])?;
        for (l, a) in self.labels.iter().zip(&self.abundances) {
            wr.write_record([l.as_str(), &a.to_string()])?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// JSON summary `{n, k, freq_counts}`.
    pub fn summary_json(&self) -> serde_json::Value {
        let fc: BTreeMap<String, u64> = self
            .freq_counts()
            .into_iter()
            .map(|(r, m)| (r.to_string(), m))
            .collect();
        serde_json::json!({ "n": self.n, "k": self.k(), "freq_counts": fc })
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_count(s: &str, line: u64) -> Result<u64> {
    match s.parse::<u64>() {
        Ok(c) if c > 0 && c <= i64::MAX as u64 => Ok(c),
        _ => Err(Error::Parse {
            line,
            message: format!("count must be a positive integer, got `{s}`"),
        }),
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads an abundance table with header `taxon,count`.
pub fn read_abundance_csv<R: Read>(r: R) -> Result<PartitionData> {
    let mut rd = csv_reader(r);
    let headers = rd.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "taxon" || &headers[1] != "count" {
        if headers.is_empty() {
            return Err(Error::Empty("no header".into()));
        }
        return Err(Error::Parse {
            line: 1,
            message: "expected header `taxon,count`".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, got {}", rec.len()),
            });
        }
        let label = rec[0].to_string();
        let count = parse_count(&rec[1], line)?;
        if !seen.insert(label.clone()) {
            return Err(Error::DuplicateTaxon(label));
        }
        rows.push((label, count));
    }
    if rows.is_empty() {
        return Err(Error::Empty("abundance file has no rows".into()));
    }
    PartitionData::from_labelled(rows)
}

/// Reads an abundance table from a file.
pub fn ingest_abundance_csv(path: impl AsRef<Path>) -> Result<PartitionData> {
    read_abundance_csv(open(path.as_ref())?)
}

/// Node of a [`TaxonomicDataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonNode {
    pub label: String,
    /// Depth, starting at 1 for the coarsest level.
    pub level: usize,
    pub count: u64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// A multi-level taxonomy with aggregated counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomicDataset {
    levels: usize,
    nodes: Vec<TaxonNode>,
    roots: Vec<usize>,
}

impl TaxonomicDataset {
    /// Builds a tree from leaf paths and counts.
    pub fn from_paths(
        levels: usize,
        paths: impl IntoIterator<Item = (Vec<String>, u64)>,
    ) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Domain("a taxonomy needs at least 2 levels".into()));
        }
        let mut nodes: Vec<TaxonNode> = Vec::new();
        let mut roots = Vec::new();
        let mut by_level: Vec<HashMap<String, usize>> = vec![HashMap::new(); levels];
        let mut any = false;
        for (path, count) in paths {
            any = true;
            if path.len() != levels {
                return Err(Error::Domain(format!(
                    "path has {} labels, expected {levels}",
                    path.len()
                )));
            }
            if count == 0 {
                return Err(Error::Domain("leaf counts must be positive".into()));
            }
            let mut parent: Option<usize> = None;
            for (depth, label) in path.iter().enumerate() {
                let idx = match by_level[depth].get(label) {
                    Some(&i) => {
                        if nodes[i].parent != parent {
                            let name = |p: Option<usize>| {
                                p.map_or_else(|| "<root>".to_string(), |p| nodes[p].label.clone())
                            };
                            return Err(Error::InconsistentNesting {
                                label: label.clone(),
                                first: name(nodes[i].parent),
                                second: name(parent),
                            });
                        }
                        i
                    }
                    None => {
                        let i = nodes.len();
                        nodes.push(TaxonNode {
                            label: label.clone(),
                            level: depth + 1,
                            count: 0,
                            parent,
                            children: Vec::new(),
                        });
                        match parent {
                            Some(p) => nodes[p].children.push(i),
                            None => roots.push(i),
                        }
                        by_level[depth].insert(label.clone(), i);
                        i
                    }
                };
                nodes[idx].count = nodes[idx]
                    .count
                    .checked_add(count)
                    .ok_or_else(|| Error::Domain("count overflow".into()))?;
                parent = Some(idx);
            }
        }
        if !any {
            return Err(Error::Empty("taxonomy has no rows".into()));
        }
        Ok(TaxonomicDataset {
            levels,
            nodes,
            roots,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> &[TaxonNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn n(&self) -> u64 {
        self.roots.iter().map(|&r| self.nodes[r].count).sum()
    }

    /// Number of distinct taxa at `level` (1-based).
    pub fn k_at(&self, level: usize) -> u64 {
        self.nodes.iter().filter(|x| x.level == level).count() as u64
    }

    /// Indices of nodes at `level`, in insertion order.
    pub fn nodes_at(&self, level: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].level == level)
            .collect()
    }

    /// Partition of the level-1 taxa.
    pub fn level1_partition(&self) -> PartitionData {
        let rows = self
            .roots
            .iter()
            .map(|&r| (self.nodes[r].label.clone(), self.nodes[r].count))
            .collect();
        PartitionData::from_labelled(rows).expect("counts checked at construction")
    }

    /// Partition of the children of node `idx`.
    pub fn child_partition(&self, idx: usize) -> PartitionData {
        let rows = self.nodes[idx]
            .children
            .iter()
            .map(|&c| (self.nodes[c].label.clone(), self.nodes[c].count))
            .collect();
        PartitionData::from_labelled(rows).expect("counts checked at construction")
    }

    /// Checks that every internal count is the sum of its children.
    pub fn is_consistent(&self) -> bool {
        self.nodes.iter().all(|x| {
            x.children.is_empty()
                || x.children.iter().map(|&c| self.nodes[c].count).sum::<u64>() == x.count
        })
    }

    /// Leaf rows `(path, count)`.
    pub fn leaf_paths(&self) -> Vec<(Vec<String>, u64)> {
        let mut out = Vec::new();
        for (i, x) in self.nodes.iter().enumerate() {
            if x.level == self.levels {
                let mut path = vec![x.label.clone()];
                let mut p = x.parent;
                while let Some(j) = p {
                    path.push(self.nodes[j].label.clone());
                    p = self.nodes[j].parent;
                }
                path.reverse();
                out.push((path, self.nodes[i].count));
            }
        }
        out
    }

    /// Writes `level1,...,levelL,count` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.levels).map(|l| format!("level{l}")).collect();
        header.push("count".into());
        wr.write_record(&header)?;
        for (mut path, c) in self.leaf_paths() {
            path.push(c.to_string());
            wr.write_record(&path)?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// Nested JSON tree `[{label, count, children: [...]}, ...]`.
    pub fn tree_json(&self) -> serde_json::Value {
        fn node(ds: &TaxonomicDataset, i: usize) -> serde_json::Value {
            let x = &ds.nodes[i];
            let kids: Vec<_> = x.children.iter().map(|&c| node(ds, c)).collect();
            serde_json::json!({ "label": x.label, "count": x.count, "children": kids })
        }
        let roots: Vec<_> = self.roots.iter().map(|&r| node(self, r)).collect();
        serde_json::json!({ "levels": self.levels, "n": self.n(), "tree": roots })
    }
}

/// Reads a taxonomy table with header `level1,...,levelL,count`.
pub fn read_taxonomy_csv<R: Read>(r: R, levels: usize) -> Result<TaxonomicDataset> {
    let mut rd = csv_reader(r);
    let headers = rd.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty("no header".into()));
    }
    let expected: Vec<String> = (1..=levels)
        .map(|l| format!("level{l}"))
        .chain(std::iter::once("count".to_string()))
        .collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != levels + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", levels + 1, rec.len()),
            });
        }
        let path: Vec<String> = rec.iter().take(levels).map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Parse {
                line,
                message: "empty taxon label".into(),
            });
        }
        let count = parse_count(&rec[levels], line)?;
        rows.push((path, count));
    }
    TaxonomicDataset::from_paths(levels, rows)
}

/// Reads a taxonomy table from a file.
pub fn ingest_taxonomy_csv(path: impl AsRef<Path>, levels: usize) -> Result<TaxonomicDataset> {
    read_taxonomy_csv(open(path.as_ref())?, levels)
}

/// Ordered taxon labels of a sample. Labels are integer ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationStream {
    pub labels: Vec<u64>,
}

impl ObservationStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_partition(&self) -> Result<PartitionData> {
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        let mut rows: Vec<(u64, u64)> = counts.into_iter().collect();
        rows.sort_unstable();
        PartitionData::from_labelled(
            rows.into_iter()
                .map(|(l, c)| (format!("t{l}"), c))
                .collect(),
        )
    }

    pub fn accumulate(&self) -> Vec<(u64, u64)> {
        accumulate(&self.labels)
    }
}

/// Running number of distinct labels `(i, K_i)` for `i = 1..=len`.
///
/// ```
/// let k = sigmadiv::data::accumulate(&["a", "a", "b"]);
/// assert_eq!(k, vec![(1, 1), (2, 1), (3, 2)]);
/// ```
pub fn accumulate<T: Hash + Eq>(stream: &[T]) -> Vec<(u64, u64)> {
    let mut seen = HashSet::new();
    let mut k = 0;
    stream
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if seen.insert(x) {
                k += 1;
            }
            (i as u64 + 1, k)
        })
        .collect()
}
