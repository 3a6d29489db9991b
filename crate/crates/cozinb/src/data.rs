//! Corpus ingestion, validation, and splitting.
//!
//! Counts are stored sparsely per sample; zeros are implicit. The
//! vocabulary owns the feature-identifier <-> column-id mapping and is
//! built in first-seen order when reading triplet files.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{shuffled_indices, RngPool};

/// Feature vocabulary: ordered identifiers plus the inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() {
                return Err(Error::data(format!("empty feature identifier at column {i}")));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate feature identifier '{e}'")));
            }
        }
        Ok(Vocab { entries, index })
    }

    /// Synthetic vocabulary "f1".."fM" for generated or index-only corpora.
    pub fn synthetic(m: usize, prefix: &str) -> Self {
        let entries: Vec<String> = (1..=m).map(|i| format!("{prefix}{i}")).collect();
        let index = entries.iter().cloned().zip(0..).collect();
        Vocab { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    fn get_or_insert(&mut self, feature: &str) -> usize {
        if let Some(&i) = self.index.get(feature) {
            return i;
        }
        let i = self.entries.len();
        self.entries.push(feature.to_string());
        self.index.insert(feature.to_string(), i);
        i
    }
}

/// Sparse count matrix over a shared vocabulary.
///
/// Invariants: column ids strictly increasing within each row and < M;
/// stored counts strictly positive; `totals[j]` equals the row sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    m: usize,
    rows: Vec<Vec<(usize, u32)>>,
    sample_ids: Vec<String>,
    labels: Vec<Option<String>>,
    totals: Vec<u64>,
}

impl CountMatrix {
    pub fn new(m: usize, rows: Vec<Vec<(usize, u32)>>, sample_ids: Vec<String>) -> Result<Self> {
        if sample_ids.len() != rows.len() {
            return Err(Error::data(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if id.is_empty() {
                return Err(Error::data("empty sample identifier"));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate sample identifier '{id}'")));
            }
        }
        let mut totals = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            let mut prev: Option<usize> = None;
            let mut n = 0u64;
            for &(col, cnt) in row {
                if col >= m {
                    return Err(Error::data(format!(
                        "row {j}: column {col} out of range (M = {m})"
                    )));
                }
                if cnt == 0 {
                    return Err(Error::data(format!(
                        "row {j}: zero count stored for column {col}"
                    )));
                }
                if let Some(p) = prev {
                    if col <= p {
                        return Err(Error::data(format!(
                            "row {j}: columns not strictly increasing at {col}"
                        )));
                    }
                }
                prev = Some(col);
                n += u64::from(cnt);
            }
            totals.push(n);
        }
        let labels = vec![None; rows.len()];
        Ok(CountMatrix { m, rows, sample_ids, labels, totals })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[(usize, u32)] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<(usize, u32)>] {
        &self.rows
    }

    /// Row sum N_j.
    pub fn total(&self, j: usize) -> u64 {
        self.totals[j]
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    pub fn dense_row(&self, j: usize) -> Vec<u32> {
        let mut v = vec![0u32; self.m];
        for &(col, cnt) in &self.rows[j] {
            v[col] = cnt;
        }
        v
    }

    /// Per-column total counts across all samples.
    pub fn column_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.m];
        for row in &self.rows {
            for &(col, cnt) in row {
                t[col] += u64::from(cnt);
            }
        }
        t
    }

    /// Attach labels by sample id; ids absent from `pairs` keep `None`,
    /// ids in `pairs` that are not in the corpus are ignored (label files
    /// may cover a superset of the corpus).
    pub fn attach_labels(&mut self, pairs: &[(String, String)]) {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        for (id, label) in pairs {
            if let Some(&j) = index.get(id.as_str()) {
                self.labels[j] = Some(label.clone());
            }
        }
    }
}

/// Train/test split with the test rows further divided into an observed
/// part (conditioning data) and a target part (scored data).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldoutSplit {
    pub train: CountMatrix,
    pub test_observed: CountMatrix,
    pub test_target: CountMatrix,
}

/// Supported on-disk corpus encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    TripletTsv,
    MatrixMarket,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet-tsv" => Ok(Format::TripletTsv),
            "matrix-market" => Ok(Format::MatrixMarket),
            other => Err(Error::config(format!(
                "unknown corpus format '{other}' (expected 'triplet-tsv' or 'matrix-market')"
            ))),
        }
    }
}

/// Read a corpus from disk.
///
/// Triplet TSV: `sample_id TAB feature TAB count`, UTF-8, `#`-prefixed
/// comment lines ignored, vocabulary and sample order taken from first
/// appearance. Zero counts register the sample and feature but store no
/// entry; duplicate nonzero (sample, feature) pairs are an error.
///
/// Matrix Market: coordinate integer format with 1-based indices; sample
/// ids and feature identifiers are synthesized as the 1-based indices.
pub fn load_counts(path: &Path, format: Format) -> Result<(CountMatrix, Vocab)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    match format {
        Format::TripletTsv => load_triplet(reader, path),
        Format::MatrixMarket => load_matrix_market(reader, path),
    }
}

fn load_triplet(reader: impl BufRead, path: &Path) -> Result<(CountMatrix, Vocab)> {
    let mut vocab = Vocab { entries: Vec::new(), index: HashMap::new() };
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut sample_ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<(usize, u32)>> = Vec::new();
    let mut seen_pairs: HashSet<(usize, usize)> = HashSet::new();

    for (ln, line) in reader.lines().enumerate() {
        let ln = ln + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::data(format!(
                "{}: line {ln}: expected 3 tab-separated fields, found {}",
                path.display(),
                fields.len()
            )));
        }
        let (sid, feat, cnt_str) = (fields[0], fields[1], fields[2].trim());
        if sid.is_empty() || feat.is_empty() {
            return Err(Error::data(format!(
                "{}: line {ln}: empty sample or feature identifier",
                path.display()
            )));
        }
        let count: u32 = cnt_str.parse().map_err(|_| {
            Error::data(format!(
                "{}: line {ln}: invalid count '{cnt_str}' (expected nonnegative integer)",
                path.display()
            ))
        })?;
        let j = match sample_index.get(sid) {
            Some(&j) => j,
            None => {
                let j = sample_ids.len();
                sample_index.insert(sid.to_string(), j);
                sample_ids.push(sid.to_string());
                rows.push(Vec::new());
                j
            }
        };
        let col = vocab.get_or_insert(feat);
        if count == 0 {
            continue; // registration only; zeros are implicit
        }
        if !seen_pairs.insert((j, col)) {
            return Err(Error::data(format!(
                "{}: line {ln}: duplicate entry for sample '{sid}', feature '{feat}'",
                path.display()
            )));
        }
        rows[j].push((col, count));
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|&(col, _)| col);
    }
    let matrix = CountMatrix::new(vocab.len(), rows, sample_ids)?;
    Ok((matrix, vocab))
}

fn load_matrix_market(reader: impl BufRead, path: &Path) -> Result<(CountMatrix, Vocab)> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => {
                return Err(Error::data(format!(
                    "{}: empty file (missing MatrixMarket header)",
                    path.display()
                )))
            }
        }
    };
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < 4
        || tokens[0] != "%%matrixmarket"
        || tokens[1] != "matrix"
        || tokens[2] != "coordinate"
        || tokens[3] != "integer"
    {
        return Err(Error::data(format!(
            "{}: unsupported header '{header}' (expected '%%MatrixMarket matrix coordinate integer general')",
            path.display()
        )));
    }
    // Skip '%' comments to the size line.
    let (mut j_dim, mut m_dim, mut nnz) = (0usize, 0usize, 0usize);
    let mut have_size = false;
    let mut entries: Vec<(usize, usize, u32)> = Vec::new();
    for (ln, line) in lines {
        let ln = ln + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if !have_size {
            if fields.len() != 3 {
                return Err(Error::data(format!(
                    "{}: line {ln}: expected size line 'rows cols nnz'",
                    path.display()
                )));
            }
            j_dim = parse_usize(fields[0], path, ln)?;
            m_dim = parse_usize(fields[1], path, ln)?;
            nnz = parse_usize(fields[2], path, ln)?;
            have_size = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::data(format!(
                "{}: line {ln}: expected entry 'row col value'",
                path.display()
            )));
        }
        let i = parse_usize(fields[0], path, ln)?;
        let j = parse_usize(fields[1], path, ln)?;
        let v: i64 = fields[2].parse().map_err(|_| {
            Error::data(format!("{}: line {ln}: invalid value '{}'", path.display(), fields[2]))
        })?;
        if i == 0 || i > j_dim || j == 0 || j > m_dim {
            return Err(Error::data(format!(
                "{}: line {ln}: index ({i}, {j}) outside 1..=({j_dim}, {m_dim})",
                path.display()
            )));
        }
        if v < 0 {
            return Err(Error::data(format!(
                "{}: line {ln}: negative count {v}",
                path.display()
            )));
        }
        if v > i64::from(u32::MAX) {
            return Err(Error::data(format!(
                "{}: line {ln}: count {v} exceeds u32 range",
                path.display()
            )));
        }
        entries.push((i - 1, j - 1, v as u32));
    }
    if !have_size && !entries.is_empty() {
        return Err(Error::data(format!("{}: missing size line", path.display())));
    }
    if entries.len() != nnz {
        return Err(Error::data(format!(
            "{}: size line declares {nnz} entries, found {}",
            path.display(),
            entries.len()
        )));
    }
    let mut rows: Vec<Vec<(usize, u32)>> = vec![Vec::new(); j_dim];
    let mut seen = HashSet::new();
    for (i, j, v) in entries {
        if !seen.insert((i, j)) {
            return Err(Error::data(format!(
                "{}: duplicate entry for row {}, column {}",
                path.display(),
                i + 1,
                j + 1
            )));
        }
        if v > 0 {
            rows[i].push((j, v));
        }
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|&(col, _)| col);
    }
    let sample_ids: Vec<String> = (1..=j_dim).map(|i| i.to_string()).collect();
    let matrix = CountMatrix::new(m_dim, rows, sample_ids)?;
    let vocab = Vocab::new((1..=m_dim).map(|i| i.to_string()).collect())?;
    Ok((matrix, vocab))
}

fn parse_usize(s: &str, path: &Path, ln: usize) -> Result<usize> {
    s.parse().map_err(|_| {
        Error::data(format!("{}: line {ln}: invalid integer '{s}'", path.display()))
    })
}

/// Write a corpus to disk in `format`; inverse of [`load_counts`].
///
/// Triplet output first emits zero-count registration lines when the
/// natural row-major stream would not reproduce the sample and vocabulary
/// orders on reload (zero counts register identifiers without storing an
/// entry), so load -> save -> load is value-identical.
pub fn save_counts(
    path: &Path,
    format: Format,
    matrix: &CountMatrix,
    vocab: &Vocab,
) -> Result<()> {
    if vocab.len() != matrix.n_features() {
        return Err(Error::data(format!(
            "vocabulary size {} does not match corpus M = {}",
            vocab.len(),
            matrix.n_features()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::TripletTsv => save_triplet(&mut w, matrix, vocab, path),
        Format::MatrixMarket => save_matrix_market(&mut w, matrix, path),
    }?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn save_triplet(
    w: &mut impl Write,
    matrix: &CountMatrix,
    vocab: &Vocab,
    path: &Path,
) -> Result<()> {
    let j_dim = matrix.n_samples();
    let m_dim = matrix.n_features();
    if j_dim == 0 && m_dim == 0 {
        return Ok(()); // empty corpus → empty file
    }
    if j_dim == 0 || m_dim == 0 {
        return Err(Error::data(
            "triplet format cannot represent a corpus with samples but no \
             features, or features but no samples",
        ));
    }
    // Simulate reload over the natural stream; emit a registration
    // preamble if first-seen order would diverge. A sample only registers
    // through its first entry line, so an empty row always diverges: its id
    // would vanish and every later sample would shift down one slot.
    let mut next_feat = 0usize;
    let mut seen_feat = vec![false; m_dim];
    let mut ordered = true;
    'sim: for row in matrix.rows() {
        if row.is_empty() {
            ordered = false;
            break;
        }
        for &(col, _) in row {
            if !seen_feat[col] {
                if col != next_feat {
                    ordered = false;
                    break 'sim;
                }
                seen_feat[col] = true;
                next_feat += 1;
            }
        }
    }
    ordered = ordered && next_feat == m_dim;
    let io = |e| Error::io(path, e);
    if !ordered && j_dim > 0 {
        for k in 0..j_dim.max(m_dim) {
            let sid = &matrix.sample_ids()[k.min(j_dim - 1)];
            let feat = &vocab.entries()[k.min(m_dim - 1)];
            writeln!(w, "{sid}\t{feat}\t0").map_err(io)?;
        }
    }
    for (j, row) in matrix.rows().iter().enumerate() {
        let sid = &matrix.sample_ids()[j];
        for &(col, cnt) in row {
            writeln!(w, "{sid}\t{}\t{cnt}", vocab.entries()[col]).map_err(io)?;
        }
    }
    Ok(())
}

fn save_matrix_market(w: &mut impl Write, matrix: &CountMatrix, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate integer general").map_err(io)?;
    let nnz: usize = matrix.rows().iter().map(Vec::len).sum();
    writeln!(w, "{} {} {nnz}", matrix.n_samples(), matrix.n_features()).map_err(io)?;
    for (j, row) in matrix.rows().iter().enumerate() {
        for &(col, cnt) in row {
            writeln!(w, "{} {} {cnt}", j + 1, col + 1).map_err(io)?;
        }
    }
    Ok(())
}

/// Read `sample_id TAB label` pairs; `#` comments and blank lines ignored.
pub fn load_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
        let ln = ln + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::data(format!(
                "{}: line {ln}: expected 'sample_id TAB label'",
                path.display()
            )));
        }
        pairs.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(pairs)
}

/// Keep the `h` columns with the largest total counts (ties broken toward
/// the lower column id) and re-project every row. Samples whose rows
/// become empty are retained as empty profiles.
pub fn filter_top_features(
    matrix: &CountMatrix,
    vocab: &Vocab,
    h: usize,
) -> Result<(CountMatrix, Vocab)> {
    if h == 0 {
        return Err(Error::config("filter_top_features: H must be >= 1"));
    }
    if h > matrix.n_features() {
        return Err(Error::config(format!(
            "filter_top_features: H = {h} exceeds M = {}",
            matrix.n_features()
        )));
    }
    let totals = matrix.column_totals();
    let mut order: Vec<usize> = (0..matrix.n_features()).collect();
    order.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..h].to_vec();
    kept.sort_unstable();
    project_columns(matrix, vocab, &kept)
}

/// Drop the named features (unknown names are ignored so a generic
/// blacklist can be applied across corpora that may lack some entries).
pub fn remove_features(
    matrix: &CountMatrix,
    vocab: &Vocab,
    names: &[String],
) -> Result<(CountMatrix, Vocab)> {
    let drop: HashSet<usize> = names.iter().filter_map(|n| vocab.id(n)).collect();
    let kept: Vec<usize> = (0..matrix.n_features()).filter(|c| !drop.contains(c)).collect();
    project_columns(matrix, vocab, &kept)
}

fn project_columns(
    matrix: &CountMatrix,
    vocab: &Vocab,
    kept: &[usize],
) -> Result<(CountMatrix, Vocab)> {
    let mut remap = vec![usize::MAX; matrix.n_features()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let rows: Vec<Vec<(usize, u32)>> = matrix
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .filter_map(|&(col, cnt)| {
                    (remap[col] != usize::MAX).then_some((remap[col], cnt))
                })
                .collect()
        })
        .collect();
    let entries: Vec<String> = kept.iter().map(|&c| vocab.entries()[c].clone()).collect();
    let mut out = CountMatrix::new(kept.len(), rows, matrix.sample_ids().to_vec())?;
    out.labels = matrix.labels.clone();
    Ok((out, Vocab::new(entries)?))
}

/// Test-sample share of the corpus used by [`split_heldout`]. The split
/// is sample-level first, then word-level within each test sample.
const TEST_SAMPLE_SHARE: f64 = 0.2;

/// Partition samples into train/test by a seeded shuffle, then assign
/// each token of each test sample to the target with probability
/// `fraction`. Deterministic for a fixed seed.
pub fn split_heldout(matrix: &CountMatrix, fraction: f64, seed: u64) -> Result<HeldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split_heldout: fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let j_dim = matrix.n_samples();
    let pool = RngPool::new(seed);
    let n_test = if j_dim >= 2 {
        ((j_dim as f64 * TEST_SAMPLE_SHARE).round() as usize).clamp(1, j_dim - 1)
    } else {
        0
    };
    let perm = shuffled_indices(j_dim, &mut pool.stream("holdout/sample_shuffle"));
    let mut test_idx: Vec<usize> = perm[..n_test].to_vec();
    test_idx.sort_unstable();
    let test_set: HashSet<usize> = test_idx.iter().copied().collect();

    let mut train_rows = Vec::new();
    let mut train_ids = Vec::new();
    let mut train_labels = Vec::new();
    let mut obs_rows = Vec::new();
    let mut tgt_rows = Vec::new();
    let mut test_ids = Vec::new();
    let mut test_labels = Vec::new();

    for j in 0..j_dim {
        if !test_set.contains(&j) {
            train_rows.push(matrix.rows()[j].clone());
            train_ids.push(matrix.sample_ids()[j].clone());
            train_labels.push(matrix.labels()[j].clone());
            continue;
        }
        let mut rng = pool.stream_indexed("holdout/word_split", j as u64);
        let mut obs = Vec::new();
        let mut tgt = Vec::new();
        for &(col, cnt) in &matrix.rows()[j] {
            let mut to_target = 0u32;
            for _ in 0..cnt {
                if rng.random::<f64>() < fraction {
                    to_target += 1;
                }
            }
            if cnt - to_target > 0 {
                obs.push((col, cnt - to_target));
            }
            if to_target > 0 {
                tgt.push((col, to_target));
            }
        }
        obs_rows.push(obs);
        tgt_rows.push(tgt);
        test_ids.push(matrix.sample_ids()[j].clone());
        test_labels.push(matrix.labels()[j].clone());
    }

    let m = matrix.n_features();
    let mut train = CountMatrix::new(m, train_rows, train_ids)?;
    train.labels = train_labels;
    let mut test_observed = CountMatrix::new(m, obs_rows, test_ids.clone())?;
    test_observed.labels = test_labels.clone();
    let mut test_target = CountMatrix::new(m, tgt_rows, test_ids)?;
    test_target.labels = test_labels;
    Ok(HeldoutSplit { train, test_observed, test_target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn triplet_basic_tally() {
        let f = write_tmp("s1\tTP53\t2\ns1\tKRAS\t1\ns2\tTP53\t1\n");
        let (m, v) = load_counts(f.path(), Format::TripletTsv).unwrap();
        assert_eq!(m.n_samples(), 2);
        assert_eq!(m.n_features(), 2);
        assert_eq!(m.totals(), &[3, 1]);
        assert_eq!(v.entries(), &["TP53".to_string(), "KRAS".to_string()]);
        assert_eq!(m.row(0), &[(0, 2), (1, 1)]);
        assert_eq!(m.row(1), &[(0, 1)]);
    }

    #[test]
    fn triplet_empty_file() {
        let f = write_tmp("");
        let (m, v) = load_counts(f.path(), Format::TripletTsv).unwrap();
        assert_eq!(m.n_samples(), 0);
        assert_eq!(m.n_features(), 0);
        assert!(v.is_empty());
    }

    #[test]
    fn triplet_negative_count_names_line() {
        let f = write_tmp("# header\ns1\tA\t1\ns1\tB\t-1\n");
        let err = load_counts(f.path(), Format::TripletTsv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {msg}");
    }

    #[test]
    fn triplet_duplicate_pair_is_error() {
        let f = write_tmp("s1\tA\t1\ns2\tA\t2\ns1\tA\t3\n");
        let err = load_counts(f.path(), Format::TripletTsv).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn triplet_zero_count_registers_without_entry() {
        let f = write_tmp("s1\tA\t0\ns2\tB\t2\n");
        let (m, v) = load_counts(f.path(), Format::TripletTsv).unwrap();
        assert_eq!(m.n_samples(), 2);
        assert_eq!(v.entries(), &["A".to_string(), "B".to_string()]);
        assert_eq!(m.totals(), &[0, 2]);
        assert!(m.row(0).is_empty());
    }

    #[test]
    fn triplet_comments_and_blank_lines_ignored() {
        let f = write_tmp("# c\n\ns1\tA\t4\n# tail\n");
        let (m, _) = load_counts(f.path(), Format::TripletTsv).unwrap();
        assert_eq!(m.totals(), &[4]);
    }

    #[test]
    fn triplet_round_trip_with_awkward_order() {
        // First-seen orders here cannot be reproduced by a row-major
        // stream alone, forcing the registration preamble.
        let f = write_tmp("sa\th\t1\nsb\tf\t1\nsa\tg\t1\nsc\tz\t0\n");
        let (m0, v0) = load_counts(f.path(), Format::TripletTsv).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_counts(out.path(), Format::TripletTsv, &m0, &v0).unwrap();
        let (m1, v1) = load_counts(out.path(), Format::TripletTsv).unwrap();
        assert_eq!(m0, m1);
        assert_eq!(v0, v1);
    }

    #[test]
    fn triplet_round_trip_canonical_has_no_preamble() {
        let f = write_tmp("s1\tA\t2\ns1\tB\t1\ns2\tA\t5\n");
        let (m0, v0) = load_counts(f.path(), Format::TripletTsv).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_counts(out.path(), Format::TripletTsv, &m0, &v0).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert!(!text.contains("\t0\n"));
        let (m1, v1) = load_counts(out.path(), Format::TripletTsv).unwrap();
        assert_eq!((m0, v0), (m1, v1));
    }

    #[test]
    fn triplet_round_trip_preserves_empty_rows() {
        // Feature order is canonical here; only the all-zero sample forces
        // the registration preamble. Without it, 's0' would vanish on
        // reload and 's1' would silently shift into its slot.
        let f = write_tmp("s0\tA\t0\ns1\tA\t2\n");
        let (m0, v0) = load_counts(f.path(), Format::TripletTsv).unwrap();
        assert_eq!(m0.n_samples(), 2);
        assert!(m0.row(0).is_empty());
        let out = tempfile::NamedTempFile::new().unwrap();
        save_counts(out.path(), Format::TripletTsv, &m0, &v0).unwrap();
        let (m1, v1) = load_counts(out.path(), Format::TripletTsv).unwrap();
        assert_eq!((m0, v0), (m1, v1));
    }

    #[test]
    fn matrix_market_round_trip() {
        let f = write_tmp(
            "%%MatrixMarket matrix coordinate integer general\n% comment\n3 4 3\n1 2 5\n3 4 1\n2 1 7\n",
        );
        let (m0, v0) = load_counts(f.path(), Format::MatrixMarket).unwrap();
        assert_eq!(m0.n_samples(), 3);
        assert_eq!(m0.n_features(), 4);
        assert_eq!(m0.totals(), &[5, 7, 1]);
        assert_eq!(v0.entries()[3], "4");
        let out = tempfile::NamedTempFile::new().unwrap();
        save_counts(out.path(), Format::MatrixMarket, &m0, &v0).unwrap();
        let (m1, v1) = load_counts(out.path(), Format::MatrixMarket).unwrap();
        assert_eq!((m0, v0), (m1, v1));
    }

    #[test]
    fn matrix_market_rejects_bad_input() {
        for text in [
            "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1.5\n",
            "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 4\n",
            "%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 4\n",
            "%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 4\n1 1 2\n",
            "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 -2\n",
        ] {
            let f = write_tmp(text);
            assert!(load_counts(f.path(), Format::MatrixMarket).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn filter_keeps_largest_with_tie_toward_lower_id() {
        // Column totals [5, 9, 9, 1]; H = 2 keeps columns 1 and 2.
        let rows = vec![vec![(0, 5), (1, 9)], vec![(2, 9), (3, 1)]];
        let m = CountMatrix::new(4, rows, vec!["a".into(), "b".into()]).unwrap();
        let v = Vocab::new(vec!["c0".into(), "c1".into(), "c2".into(), "c3".into()]).unwrap();
        let (fm, fv) = filter_top_features(&m, &v, 2).unwrap();
        assert_eq!(fv.entries(), &["c1".to_string(), "c2".to_string()]);
        assert_eq!(fm.totals(), &[9, 9]);
        // H = M is the identity projection.
        let (idm, idv) = filter_top_features(&m, &v, 4).unwrap();
        assert_eq!(idm, m);
        assert_eq!(idv, v);
        assert!(filter_top_features(&m, &v, 5).is_err());
        assert!(filter_top_features(&m, &v, 0).is_err());
    }

    #[test]
    fn filter_matches_brute_force_mass_and_is_idempotent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let (j_dim, m_dim, h) = (20usize, 50usize, 10usize);
        let mut rows: Vec<Vec<(usize, u32)>> = Vec::new();
        for _ in 0..j_dim {
            let mut row = Vec::new();
            for c in 0..m_dim {
                if rng.random::<f64>() < 0.3 {
                    row.push((c, rng.random_range(1..6u32)));
                }
            }
            rows.push(row);
        }
        let ids = (0..j_dim).map(|i| format!("s{i}")).collect();
        let m = CountMatrix::new(m_dim, rows, ids).unwrap();
        let v = Vocab::synthetic(m_dim, "f");
        // Brute-force oracle: densify, sum columns, take the H largest.
        let mut sums = vec![0u64; m_dim];
        for j in 0..j_dim {
            for (c, x) in m.dense_row(j).into_iter().enumerate() {
                sums[c] += u64::from(x);
            }
        }
        let mut sorted = sums.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let expected: u64 = sorted[..h].iter().sum();
        let (fm, fv) = filter_top_features(&m, &v, h).unwrap();
        assert_eq!(fm.totals().iter().sum::<u64>(), expected);
        let (fm2, fv2) = filter_top_features(&fm, &fv, h).unwrap();
        assert_eq!((fm2, fv2), (fm, fv));
    }

    #[test]
    fn remove_features_drops_named_and_ignores_unknown() {
        let rows = vec![vec![(0, 1), (1, 2), (2, 3)]];
        let m = CountMatrix::new(3, rows, vec!["s".into()]).unwrap();
        let v = Vocab::new(vec!["keep".into(), "drop".into(), "keep2".into()]).unwrap();
        let (rm, rv) =
            remove_features(&m, &v, &["drop".to_string(), "absent".to_string()]).unwrap();
        assert_eq!(rv.entries(), &["keep".to_string(), "keep2".to_string()]);
        assert_eq!(rm.row(0), &[(0, 1), (1, 3)]);
    }

    fn random_corpus(seed: u64, j_dim: usize, m_dim: usize) -> CountMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<(usize, u32)>> = Vec::new();
        for _ in 0..j_dim {
            let mut row = Vec::new();
            for c in 0..m_dim {
                if rng.random::<f64>() < 0.4 {
                    row.push((c, rng.random_range(1..10u32)));
                }
            }
            rows.push(row);
        }
        let ids = (0..j_dim).map(|i| format!("s{i}")).collect();
        CountMatrix::new(m_dim, rows, ids).unwrap()
    }

    #[test]
    fn split_is_deterministic_and_reconstructs_rows() {
        let m = random_corpus(4, 25, 12);
        let s1 = split_heldout(&m, 0.5, 7).unwrap();
        let s2 = split_heldout(&m, 0.5, 7).unwrap();
        assert_eq!(s1, s2);
        let s3 = split_heldout(&m, 0.5, 8).unwrap();
        assert_ne!(s1, s3);
        assert_eq!(
            s1.train.n_samples() + s1.test_observed.n_samples(),
            m.n_samples()
        );
        assert_eq!(s1.test_observed.sample_ids(), s1.test_target.sample_ids());
        // observed + target reconstruct each original test row exactly.
        for (t, sid) in s1.test_observed.sample_ids().iter().enumerate() {
            let j = m.sample_ids().iter().position(|s| s == sid).unwrap();
            let mut recombined = vec![0u32; m.n_features()];
            for &(c, x) in s1.test_observed.row(t) {
                recombined[c] += x;
            }
            for &(c, x) in s1.test_target.row(t) {
                recombined[c] += x;
            }
            assert_eq!(recombined, m.dense_row(j));
        }
    }

    #[test]
    fn split_target_size_tracks_binomial() {
        // One fat sample: 1000 tokens, fraction 0.5 → target within
        // 3 sigma = 3 * sqrt(1000 * 0.25) ≈ 47.4 of 500.
        let rows = vec![vec![(0, 1000)], vec![(0, 1)], vec![(0, 1)], vec![(0, 1)], vec![(0, 1)]];
        let ids = (0..5).map(|i| format!("s{i}")).collect();
        let m = CountMatrix::new(1, rows, ids).unwrap();
        let mut seen_fat = 0;
        for seed in 0..40 {
            let s = split_heldout(&m, 0.5, seed).unwrap();
            for (t, sid) in s.test_target.sample_ids().iter().enumerate() {
                if sid == "s0" {
                    seen_fat += 1;
                    let target: u64 = s.test_target.total(t);
                    assert!(
                        (f64::from(target as u32) - 500.0).abs() < 47.5,
                        "target {target} too far from 500 (seed {seed})"
                    );
                }
            }
        }
        assert!(seen_fat > 0, "fat sample never landed in the test split");
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let m = random_corpus(1, 4, 3);
        assert!(split_heldout(&m, 0.0, 1).is_err());
        assert!(split_heldout(&m, 1.0, 1).is_err());
    }

    #[test]
    fn labels_attach_by_sample_id() {
        let f = write_tmp("s1\tA\t1\ns2\tB\t1\n");
        let (mut m, _) = load_counts(f.path(), Format::TripletTsv).unwrap();
        let lf = write_tmp("# labels\ns2\tLUAD\nunknown\tBRCA\n");
        let pairs = load_labels(lf.path()).unwrap();
        m.attach_labels(&pairs);
        assert_eq!(m.labels(), &[None, Some("LUAD".to_string())]);
    }

    #[test]
    fn count_matrix_validates_invariants() {
        assert!(CountMatrix::new(2, vec![vec![(0, 1), (0, 2)]], vec!["s".into()]).is_err());
        assert!(CountMatrix::new(2, vec![vec![(2, 1)]], vec!["s".into()]).is_err());
        assert!(CountMatrix::new(2, vec![vec![(0, 0)]], vec!["s".into()]).is_err());
        assert!(CountMatrix::new(2, vec![vec![(1, 1), (0, 1)]], vec!["s".into()]).is_err());
        assert!(CountMatrix::new(1, vec![vec![], vec![]], vec!["s".into(), "s".into()]).is_err());
    }
}
