//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Traversal uses the dot product of stored f32 vectors; returned hits are
//! re-scored in f64 so callers threshold on exact cosine values.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::{dot, get_f32s, get_u32, get_u64, put_f32s, put_u32, put_u64, tmp_path, NameEmbedding, NamePart};
use crate::error::IndexError;
use crate::registry::{PackageRef, RegistryId};

const MAGIC: &[u8; 8] = b"PKGHNSW1";
const FORMAT_VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 100,
            seed: 7,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams("m must be >= 2".into()));
        }
        if self.ef_construction < self.m || self.ef_search == 0 {
            return Err(IndexError::InvalidParams(
                "ef_construction must be >= m and ef_search > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborHit {
    #[serde(rename = "ref")]
    pub package: PackageRef,
    pub part: NamePart,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    package: PackageRef,
    part: NamePart,
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    sim: f32,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct AnnIndex {
    params: HnswParams,
    dim: usize,
    entries: Vec<Entry>,
    keys: HashSet<(RegistryId, String, NamePart)>,
    vectors: Vec<f32>,
    /// links[node][layer] for layers 0..=level(node)
    links: Vec<Vec<Vec<u32>>>,
    entry_point: Option<u32>,
    max_level: usize,
    level_mult: f64,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl AnnIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, IndexError> {
        params.validate()?;
        if dim == 0 {
            return Err(IndexError::InvalidParams("dimension must be > 0".into()));
        }
        Ok(AnnIndex {
            params,
            dim,
            entries: Vec::new(),
            keys: HashSet::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            entry_point: None,
            max_level: 0,
            level_mult: 1.0 / (params.m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            frozen: false,
        })
    }

    /// Builds and freezes an index. Insertion order and seed fully determine
    /// the graph.
    pub fn build<I>(items: I, params: HnswParams) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (PackageRef, NamePart, NameEmbedding)>,
    {
        let mut items = items.into_iter().peekable();
        let dim = match items.peek() {
            Some((_, _, v)) => v.dimension(),
            None => return Err(IndexError::EmptyInput),
        };
        let mut index = AnnIndex::new(dim, params)?;
        for (package, part, v) in items {
            index.add(package, part, &v)?;
        }
        index.freeze();
        Ok(index)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Number of nodes present on each layer, bottom first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.max_level + 1];
        for l in &self.links {
            for s in sizes.iter_mut().take(l.len()) {
                *s += 1;
            }
        }
        sizes
    }

    /// Largest out-degree on layer 0 and on any upper layer.
    pub fn max_degrees(&self) -> (usize, usize) {
        let mut base = 0;
        let mut upper = 0;
        for l in &self.links {
            for (layer, adj) in l.iter().enumerate() {
                if layer == 0 {
                    base = base.max(adj.len());
                } else {
                    upper = upper.max(adj.len());
                }
            }
        }
        (base, upper)
    }

    /// Packages of the entries tagged `part`, in insertion order.
    pub fn entries_with_part(&self, part: NamePart) -> Vec<PackageRef> {
        self.entries
            .iter()
            .filter(|e| e.part == part)
            .map(|e| e.package.clone())
            .collect()
    }

    fn vector(&self, id: u32) -> &[f32] {
        let i = id as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn sim(&self, q: &[f32], id: u32) -> f32 {
        self.vector(id).iter().zip(q).map(|(a, b)| a * b).sum()
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    pub fn add(&mut self, package: PackageRef, part: NamePart, v: &NameEmbedding) -> Result<(), IndexError> {
        if self.frozen {
            return Err(IndexError::InvalidParams("index is frozen".into()));
        }
        if v.dimension() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: v.dimension(),
            });
        }
        let key = (package.registry, package.raw.clone(), part);
        if !self.keys.insert(key) {
            return Err(IndexError::InvalidParams(format!(
                "duplicate entry {package} ({})",
                part.as_str()
            )));
        }
        let id = self.entries.len() as u32;
        let u: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let level = (-u.ln() * self.level_mult).floor() as usize;
        self.entries.push(Entry { package, part });
        self.vectors.extend_from_slice(v.as_slice());
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(mut ep) = self.entry_point else {
            self.entry_point = Some(id);
            self.max_level = level;
            return Ok(());
        };
        let q = v.as_slice().to_vec();
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer, None);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[id as usize][layer] = chosen.iter().map(|s| s.id).collect();
            for s in &chosen {
                self.connect(s.id, id, layer);
            }
            eps = found.iter().map(|s| s.id).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = Some(id);
        }
        Ok(())
    }

    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        let adj = &mut self.links[from as usize][layer];
        adj.push(to);
        if adj.len() <= cap {
            return;
        }
        let base = self.vector(from).to_vec();
        let mut candidates: Vec<Scored> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Scored {
                sim: self.sim(&base, n),
                id: n,
            })
            .collect();
        candidates.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&candidates, cap);
        self.links[from as usize][layer] = kept.into_iter().map(|s| s.id).collect();
    }

    /// Neighbor-selection heuristic: walk candidates from nearest, keeping
    /// one only if it is closer to the base than to every kept neighbor.
    /// `candidates` must be sorted by descending similarity.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vector(c.id);
            let diverse = kept.iter().all(|k| {
                let s: f32 = cv.iter().zip(self.vector(k.id)).map(|(a, b)| a * b).sum();
                c.sim > s
            });
            if diverse {
                kept.push(c);
            }
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut ep: u32, layer: usize) -> u32 {
        let mut best = self.sim(q, ep);
        loop {
            let mut moved = false;
            for &n in &self.links[ep as usize][layer] {
                let s = self.sim(q, n);
                if s > best {
                    best = s;
                    ep = n;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Beam search on one layer. With a filter, every node is traversed but
    /// only matching parts enter the result set. Output is sorted by
    /// descending similarity.
    fn search_layer(
        &self,
        q: &[f32],
        eps: &[u32],
        ef: usize,
        layer: usize,
        filter: Option<NamePart>,
    ) -> Vec<Scored> {
        let admit = |id: u32| filter.is_none_or(|p| self.entries[id as usize].part == p);
        let mut visited: HashSet<u32> = HashSet::with_capacity(ef * 8);
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e) {
                let s = Scored {
                    sim: self.sim(q, e),
                    id: e,
                };
                candidates.push(s);
                if admit(e) {
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        while let Some(c) = candidates.pop() {
            if results.len() >= ef {
                if let Some(Reverse(worst)) = results.peek() {
                    if c.sim < worst.sim {
                        break;
                    }
                }
            }
            for &n in &self.links[c.id as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    sim: self.sim(q, n),
                    id: n,
                };
                let worst = results.peek().map(|r| r.0.sim);
                if results.len() < ef || worst.is_none_or(|w| s.sim > w) {
                    candidates.push(s);
                    if admit(n) {
                        results.push(Reverse(s));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    pub fn search(&self, query: &NameEmbedding, k: usize, ef_search: usize) -> Result<Vec<NeighborHit>, IndexError> {
        self.search_filtered(query, k, ef_search, None)
    }

    /// Top-`k` entries of one part (or of any part when `part` is `None`).
    pub fn search_filtered(
        &self,
        query: &NameEmbedding,
        k: usize,
        ef_search: usize,
        part: Option<NamePart>,
    ) -> Result<Vec<NeighborHit>, IndexError> {
        let Some(mut ep) = self.entry_point else {
            return Err(IndexError::EmptyIndex);
        };
        if query.dimension() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.dimension(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(q, ep, layer);
        }
        let found = self.search_layer(q, &[ep], ef_search.max(k), 0, part);
        let mut hits: Vec<NeighborHit> = found
            .into_iter()
            .map(|s| {
                let e = &self.entries[s.id as usize];
                NeighborHit {
                    package: e.package.clone(),
                    part: e.part,
                    similarity: dot(q, self.vector(s.id)).clamp(-1.0, 1.0),
                }
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        let tmp = tmp_path(path);
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        put_u32(w, self.dim as u32)?;
        put_u32(w, self.params.m as u32)?;
        put_u32(w, self.params.ef_construction as u32)?;
        put_u32(w, self.params.ef_search as u32)?;
        put_u64(w, self.params.seed)?;
        put_u64(w, self.entries.len() as u64)?;
        put_u32(w, self.entry_point.unwrap_or(u32::MAX))?;
        put_u32(w, self.max_level as u32)?;
        for (i, e) in self.entries.iter().enumerate() {
            write_ref(w, &e.package)?;
            w.write_all(&[e.part.to_byte()])?;
            put_f32s(w, self.vector(i as u32))?;
            let layers = &self.links[i];
            put_u32(w, layers.len() as u32)?;
            for adj in layers {
                put_u32(w, adj.len() as u32)?;
                for &n in adj {
                    put_u32(w, n)?;
                }
            }
        }
        w.write_all(TRAILER)
    }

    /// Loads a frozen index.
    pub fn load(path: impl AsRef<Path>) -> Result<AnnIndex, IndexError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::FormatVersionMismatch("bad magic header".into()));
        }
        let version = get_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch(format!(
                "unsupported index version {version}"
            )));
        }
        let dim = get_u32(&mut r)? as usize;
        let params = HnswParams {
            m: get_u32(&mut r)? as usize,
            ef_construction: get_u32(&mut r)? as usize,
            ef_search: get_u32(&mut r)? as usize,
            seed: get_u64(&mut r)?,
        };
        let mut index = AnnIndex::new(dim, params)
            .map_err(|e| IndexError::FormatVersionMismatch(e.to_string()))?;
        let count = get_u64(&mut r)? as usize;
        let ep = get_u32(&mut r)?;
        index.max_level = get_u32(&mut r)? as usize;
        let corrupt = |m: &str| IndexError::FormatVersionMismatch(m.to_string());
        for _ in 0..count {
            let package = read_ref(&mut r)?;
            let mut part = [0u8; 1];
            r.read_exact(&mut part)?;
            let part = NamePart::from_byte(part[0]).ok_or_else(|| corrupt("bad part tag"))?;
            index.vectors.extend(get_f32s(&mut r, dim)?);
            let layer_count = get_u32(&mut r)? as usize;
            if layer_count == 0 || layer_count > index.max_level + 1 {
                return Err(corrupt("bad layer count"));
            }
            let mut layers = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let n = get_u32(&mut r)? as usize;
                let mut adj = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let id = get_u32(&mut r)?;
                    if id as usize >= count {
                        return Err(corrupt("neighbor id out of range"));
                    }
                    adj.push(id);
                }
                layers.push(adj);
            }
            index.keys.insert((package.registry, package.raw.clone(), part));
            index.entries.push(Entry { package, part });
            index.links.push(layers);
        }
        let mut trailer = [0u8; 4];
        r.read_exact(&mut trailer)?;
        if &trailer != TRAILER {
            return Err(corrupt("missing trailer"));
        }
        index.entry_point = match (ep, count) {
            (u32::MAX, 0) => None,
            (e, c) if (e as usize) < c => Some(e),
            _ => return Err(corrupt("bad entry point")),
        };
        index.frozen = true;
        Ok(index)
    }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn put_opt<W: Write>(w: &mut W, s: &Option<String>) -> io::Result<()> {
    match s {
        Some(s) => {
            w.write_all(&[1])?;
            put_str(w, s)
        }
        None => w.write_all(&[0]),
    }
}

fn get_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| IndexError::FormatVersionMismatch("string is not UTF-8".into()))
}

fn get_opt<R: Read>(r: &mut R) -> Result<Option<String>, IndexError> {
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    match flag[0] {
        0 => Ok(None),
        1 => get_str(r).map(Some),
        _ => Err(IndexError::FormatVersionMismatch("bad option flag".into())),
    }
}

fn write_ref<W: Write>(w: &mut W, p: &PackageRef) -> io::Result<()> {
    put_str(w, p.registry.as_str())?;
    put_str(w, &p.raw)?;
    put_opt(w, &p.domain)?;
    put_opt(w, &p.namespace)?;
    put_str(w, &p.identifier)?;
    put_str(w, &p.normalized)
}

fn read_ref<R: Read>(r: &mut R) -> Result<PackageRef, IndexError> {
    let registry = get_str(r)?
        .parse::<RegistryId>()
        .map_err(|e| IndexError::FormatVersionMismatch(e.to_string()))?;
    Ok(PackageRef {
        registry,
        raw: get_str(r)?,
        domain: get_opt(r)?,
        namespace: get_opt(r)?,
        identifier: get_str(r)?,
        normalized: get_str(r)?,
    })
}

/// Descending similarity, ties by raw name then part.
fn sort_hits(hits: &mut [NeighborHit]) {
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.package.raw.cmp(&b.package.raw))
            .then_with(|| a.part.cmp(&b.part))
    });
}

/// Exhaustive top-`k` by exact cosine; the reference for the graph search.
pub fn exact_search(
    items: &[(PackageRef, NamePart, NameEmbedding)],
    query: &NameEmbedding,
    k: usize,
) -> Vec<NeighborHit> {
    let mut hits: Vec<NeighborHit> = items
        .iter()
        .filter(|(_, _, v)| v.dimension() == query.dimension())
        .map(|(p, part, v)| NeighborHit {
            package: p.clone(),
            part: *part,
            similarity: dot(query.as_slice(), v.as_slice()).clamp(-1.0, 1.0),
        })
        .collect();
    sort_hits(&mut hits);
    hits.truncate(k);
    hits
}
