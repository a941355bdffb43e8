//! Dataset container, split generation and synthetic fixtures.
//!
//! A dataset lives in one directory of UTF-8 text files:
//!
//! ```text
//! meta.txt    n <int> / D <int> / O <int> / name <string>, one key per line
//! edges.txt   src dst weight         (0-based, each undirected edge once)
//! feats.txt   row col value          (sparse feature triplets)
//! labels.txt  node class_id
//! split.txt   train|valid|test node  (optional canonical split)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Duplicate links and
//! self-loops in `edges.txt` are dropped on load; a link listed twice with
//! different weights is a data error.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sparsela::{renormalize_adjacency, sparsity, CsrMatrix, SparseSym};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `n × D` node features.
    pub features: CsrMatrix,
    pub num_classes: usize,
    /// Class id per node; `None` for nodes the source leaves unlabeled.
    pub labels: Vec<Option<usize>>,
    pub adjacency: SparseSym,
    pub canonical_split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Table-style summary of a loaded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub nodes: usize,
    pub links: usize,
    pub components: usize,
    pub features: usize,
    pub classes: usize,
    /// Sparsity of the renormalized adjacency, as a fraction.
    pub sparsity: f64,
}

impl Dataset {
    /// Assemble a dataset and check its invariants.
    pub fn new(
        name: impl Into<String>,
        features: CsrMatrix,
        num_classes: usize,
        labels: Vec<Option<usize>>,
        adjacency: SparseSym,
        canonical_split: Option<Split>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            num_classes,
            labels,
            adjacency,
            canonical_split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.features.nrows() != n || self.labels.len() != n {
            return Err(Error::Data(format!(
                "adjacency has {n} nodes but features have {} rows and labels {} entries",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        for i in 0..n {
            let (cols, vals) = self.adjacency.row(i);
            if cols.binary_search(&i).is_ok() {
                return Err(Error::Data(format!("self-loop at node {i}")));
            }
            if vals.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Data(format!("invalid link weight in row {i}")));
            }
        }
        if self.features.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        if let Some((i, c)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= self.num_classes).map(|c| (i, c)))
        {
            return Err(Error::Data(format!(
                "node {i} has class {c} but O = {}",
                self.num_classes
            )));
        }
        if let Some(split) = &self.canonical_split {
            split.validate(n)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Undirected link count, `nnz(A) / 2`.
    pub fn num_links(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn num_components(&self) -> usize {
        connected_components(&self.adjacency)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            nodes: self.n(),
            links: self.num_links(),
            components: self.num_components(),
            features: self.num_features(),
            classes: self.num_classes,
            sparsity: sparsity(&renormalize_adjacency(&self.adjacency)),
        }
    }
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![None; n];
        for (part, nodes) in [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ] {
            for &v in nodes.iter() {
                if v >= n {
                    return Err(Error::Data(format!(
                        "{part} node {v} out of range (n = {n})"
                    )));
                }
                if let Some(other) = owner[v] {
                    return Err(Error::Data(format!(
                        "node {v} appears in both {other} and {part}"
                    )));
                }
                owner[v] = Some(part);
            }
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Number of connected components (isolated nodes count as components).
pub fn connected_components(a: &SparseSym) -> usize {
    let n = a.n();
    let mut uf = UnionFind::new(n);
    let mut components = n;
    for i in 0..n {
        for &j in a.row(i).0 {
            if j > i && uf.union(i, j) {
                components -= 1;
            }
        }
    }
    components
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<T: FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {tok:?}")))
}

fn expect_end(path: &Path, line: usize, mut toks: std::str::SplitWhitespace<'_>) -> Result<()> {
    match toks.next() {
        Some(extra) => Err(parse_err(
            path,
            line,
            format!("unexpected trailing token {extra:?}"),
        )),
        None => Ok(()),
    }
}

struct Meta {
    n: usize,
    d: usize,
    o: usize,
    name: String,
}

fn parse_meta(path: &Path) -> Result<Meta> {
    let (mut n, mut d, mut o, mut name) = (None, None, None, None);
    for (line, text) in read_lines(path)? {
        let (key, rest) = text
            .split_once(char::is_whitespace)
            .unwrap_or((text.as_str(), ""));
        let rest = rest.trim();
        match key {
            "n" => n = Some(field(path, line, Some(rest), "n")?),
            "D" => d = Some(field(path, line, Some(rest), "D")?),
            "O" => o = Some(field(path, line, Some(rest), "O")?),
            "name" => name = Some(rest.to_string()),
            other => return Err(parse_err(path, line, format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Data(format!("{}: missing key {k}", path.display()));
    Ok(Meta {
        n: n.ok_or_else(|| missing("n"))?,
        d: d.ok_or_else(|| missing("D"))?,
        o: o.ok_or_else(|| missing("O"))?,
        name: name.ok_or_else(|| missing("name"))?,
    })
}

fn parse_edges(path: &Path, n: usize) -> Result<SparseSym> {
    let mut links: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let mut toks = text.split_whitespace();
        let src: usize = field(path, line, toks.next(), "source node")?;
        let dst: usize = field(path, line, toks.next(), "target node")?;
        let w: f64 = field(path, line, toks.next(), "weight")?;
        expect_end(path, line, toks)?;
        if src >= n || dst >= n {
            return Err(parse_err(
                path,
                line,
                format!("node index out of range (n = {n})"),
            ));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(parse_err(path, line, format!("invalid weight {w}")));
        }
        if src == dst || w == 0.0 {
            continue;
        }
        match links.entry((src.min(dst), src.max(dst))) {
            Entry::Vacant(e) => {
                e.insert(w);
            }
            Entry::Occupied(e) if *e.get() == w => {}
            Entry::Occupied(e) => {
                return Err(Error::Data(format!(
                    "{}:{line}: asymmetric weight conflict on link ({src}, {dst}): {} vs {w}",
                    path.display(),
                    e.get()
                )))
            }
        }
    }
    SparseSym::from_triplets(
        n,
        links
            .iter()
            .flat_map(|(&(i, j), &w)| [(i, j, w), (j, i, w)]),
    )
}

fn parse_features(path: &Path, n: usize, d: usize) -> Result<CsrMatrix> {
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let mut toks = text.split_whitespace();
        let r: usize = field(path, line, toks.next(), "row")?;
        let c: usize = field(path, line, toks.next(), "column")?;
        let v: f64 = field(path, line, toks.next(), "value")?;
        expect_end(path, line, toks)?;
        if r >= n || c >= d {
            return Err(parse_err(
                path,
                line,
                format!("entry ({r}, {c}) outside {n}x{d}"),
            ));
        }
        if !v.is_finite() {
            return Err(parse_err(path, line, "non-finite feature value"));
        }
        if entries.insert((r, c), v).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("duplicate feature entry ({r}, {c})"),
            ));
        }
    }
    CsrMatrix::from_triplets(n, d, entries.into_iter().map(|((r, c), v)| (r, c, v)))
}

fn parse_labels(path: &Path, n: usize, o: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; n];
    for (line, text) in read_lines(path)? {
        let mut toks = text.split_whitespace();
        let node: usize = field(path, line, toks.next(), "node")?;
        let class: usize = field(path, line, toks.next(), "class id")?;
        expect_end(path, line, toks)?;
        if node >= n {
            return Err(parse_err(
                path,
                line,
                format!("node {node} out of range (n = {n})"),
            ));
        }
        if class >= o {
            return Err(parse_err(
                path,
                line,
                format!("class {class} out of range (O = {o})"),
            ));
        }
        if labels[node].replace(class).is_some() {
            return Err(parse_err(path, line, format!("node {node} labeled twice")));
        }
    }
    Ok(labels)
}

fn parse_split(path: &Path, n: usize) -> Result<Split> {
    let mut split = Split::default();
    for (line, text) in read_lines(path)? {
        let mut toks = text.split_whitespace();
        let part = toks.next().unwrap_or_default();
        let node: usize = field(path, line, toks.next(), "node")?;
        expect_end(path, line, toks)?;
        if node >= n {
            return Err(parse_err(
                path,
                line,
                format!("node {node} out of range (n = {n})"),
            ));
        }
        match part {
            "train" => split.train.push(node),
            "valid" => split.valid.push(node),
            "test" => split.test.push(node),
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!("unknown split part {other:?}"),
                ))
            }
        }
    }
    Ok(split)
}

/// Load a dataset container directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta = parse_meta(&dir.join("meta.txt"))?;
    let adjacency = parse_edges(&dir.join("edges.txt"), meta.n)?;
    let features = parse_features(&dir.join("feats.txt"), meta.n, meta.d)?;
    let labels = parse_labels(&dir.join("labels.txt"), meta.n, meta.o)?;
    let split_path = dir.join("split.txt");
    let canonical_split = if split_path.exists() {
        Some(parse_split(&split_path, meta.n)?)
    } else {
        None
    };
    Dataset::new(
        meta.name,
        features,
        meta.o,
        labels,
        adjacency,
        canonical_split,
    )
}

/// Write a dataset in canonical container form: links as `i < j` in row
/// order, features and labels in row order, floats in shortest round-trip
/// notation.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path: PathBuf = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };

    write(
        "meta.txt",
        format!(
            "n {}\nD {}\nO {}\nname {}\n",
            ds.n(),
            ds.num_features(),
            ds.num_classes,
            ds.name
        ),
    )?;

    let mut edges = String::new();
    for i in 0..ds.n() {
        let (cols, vals) = ds.adjacency.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            if j > i {
                writeln!(edges, "{i} {j} {w}").unwrap();
            }
        }
    }
    write("edges.txt", edges)?;

    let mut feats = String::new();
    for i in 0..ds.n() {
        let (cols, vals) = ds.features.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            writeln!(feats, "{i} {j} {v}").unwrap();
        }
    }
    write("feats.txt", feats)?;

    let mut labels = String::new();
    for (i, l) in ds.labels.iter().enumerate() {
        if let Some(c) = l {
            writeln!(labels, "{i} {c}").unwrap();
        }
    }
    write("labels.txt", labels)?;

    if let Some(split) = &ds.canonical_split {
        let mut body = String::new();
        for (part, nodes) in [
            ("train", &split.train),
            ("valid", &split.valid),
            ("test", &split.test),
        ] {
            for v in nodes {
                writeln!(body, "{part} {v}").unwrap();
            }
        }
        write("split.txt", body)?;
    }
    Ok(())
}

/// Sizes of a Planetoid-ratio split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitConfig {
    pub per_class: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            per_class: 20,
            valid: 500,
            test: 1000,
        }
    }
}

/// Random split with the Planetoid ratio: 20 labeled training nodes per
/// class, then 500 validation and 1000 test nodes drawn uniformly (not
/// stratified) from the remaining labeled nodes.
pub fn planetoid_ratio_split(ds: &Dataset, seed: u64) -> Result<Split> {
    ratio_split(ds, SplitConfig::default(), seed)
}

pub fn ratio_split(ds: &Dataset, cfg: SplitConfig, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for (i, l) in ds.labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    let mut in_train = vec![false; ds.n()];
    let mut train = Vec::with_capacity(cfg.per_class * ds.num_classes);
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < cfg.per_class {
            return Err(Error::Config(format!(
                "class {c} has {} labeled nodes, need {}",
                nodes.len(),
                cfg.per_class
            )));
        }
        nodes.shuffle(&mut rng);
        for &v in &nodes[..cfg.per_class] {
            in_train[v] = true;
            train.push(v);
        }
    }
    let mut rest: Vec<usize> = (0..ds.n())
        .filter(|&i| ds.labels[i].is_some() && !in_train[i])
        .collect();
    if rest.len() < cfg.valid + cfg.test {
        return Err(Error::Config(format!(
            "{} labeled nodes remain after training selection, need {}",
            rest.len(),
            cfg.valid + cfg.test
        )));
    }
    rest.shuffle(&mut rng);
    let valid = rest[..cfg.valid].to_vec();
    let test = rest[cfg.valid..cfg.valid + cfg.test].to_vec();
    Ok(Split { train, valid, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    Path,
    Complete,
    TwoBlocks,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(Self::Path),
            "complete" => Ok(Self::Complete),
            "two_blocks" | "two-blocks" => Ok(Self::TwoBlocks),
            other => Err(Error::Argument(format!(
                "unknown synthetic graph kind {other:?}"
            ))),
        }
    }
}

/// Small deterministic graphs for tests: identity (one-hot) features and two
/// block labels, nodes `< n/2` in class 0.
///
/// `TwoBlocks` links node pairs inside a block with probability 0.6 and
/// across blocks with probability 0.05.
pub fn synthetic_graph(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Argument(format!(
            "synthetic graph needs n >= 2, got {n}"
        )));
    }
    let half = n / 2;
    let block = |i: usize| usize::from(i >= half);
    let mut links = Vec::new();
    match kind {
        SyntheticKind::Path => links.extend((0..n - 1).map(|i| (i, i + 1))),
        SyntheticKind::Complete => {
            links.extend((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
        }
        SyntheticKind::TwoBlocks => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                for j in i + 1..n {
                    let p = if block(i) == block(j) { 0.6 } else { 0.05 };
                    if rng.random::<f64>() < p {
                        links.push((i, j));
                    }
                }
            }
        }
    }
    let adjacency = SparseSym::from_triplets(
        n,
        links.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]),
    )?;
    let name = match kind {
        SyntheticKind::Path => format!("path-{n}"),
        SyntheticKind::Complete => format!("complete-{n}"),
        SyntheticKind::TwoBlocks => format!("two_blocks-{n}-{seed}"),
    };
    Dataset::new(
        name,
        CsrMatrix::identity(n),
        2,
        (0..n).map(|i| Some(block(i))).collect(),
        adjacency,
        None,
    )
}
