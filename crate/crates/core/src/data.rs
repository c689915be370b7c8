//! Paired samples, CSV ingestion and ranking.

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Observations `(x_i, y_i)`, `i = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "x has {} values but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::SampleTooSmall { n: 0, min: 1 });
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at position {}",
                i % x.len()
            )));
        }
        Ok(PairedSample { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Apply a transformation to each coordinate.
    pub fn map(&self, fx: impl Fn(f64) -> f64, fy: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.x.iter().map(|&v| fx(v)).collect(),
            self.y.iter().map(|&v| fy(v)).collect(),
        )
    }
}

/// Ranks `r_i = n F̂₁(x_i)` and `s_i = n F̂₂(y_i)`, each a permutation of `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedSample {
    r: Vec<usize>,
    s: Vec<usize>,
}

impl RankedSample {
    pub fn new(r: Vec<usize>, s: Vec<usize>) -> Result<Self> {
        if r.len() != s.len() {
            return Err(Error::invalid("rank vectors differ in length"));
        }
        if r.is_empty() {
            return Err(Error::SampleTooSmall { n: 0, min: 1 });
        }
        if !is_permutation(&r) || !is_permutation(&s) {
            return Err(Error::invalid("ranks must be permutations of 1..=n"));
        }
        Ok(RankedSample { r, s })
    }

    /// Ranks `r = (1..=n)` and `s = π`.
    pub fn from_permutation(pi: &[usize]) -> Result<Self> {
        Self::new((1..=pi.len()).collect(), pi.to_vec())
    }

    pub fn r(&self) -> &[usize] {
        &self.r
    }

    pub fn s(&self) -> &[usize] {
        &self.s
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// The permutation `π` with `π[r_i] = s_i`, returned 0-based in position
    /// and 1-based in value: `pi[k - 1]` is the y-rank of the observation with
    /// x-rank `k`.
    pub fn permutation(&self) -> Vec<usize> {
        let mut pi = vec![0; self.n()];
        for (&ri, &si) in self.r.iter().zip(&self.s) {
            pi[ri - 1] = si;
        }
        pi
    }
}

fn is_permutation(v: &[usize]) -> bool {
    let mut seen = vec![false; v.len()];
    v.iter().all(|&k| {
        k >= 1 && k <= v.len() && !std::mem::replace(&mut seen[k - 1], true)
    })
}

/// What to do with tied values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum TiePolicy {
    /// Refuse tied data.
    #[default]
    Error,
    /// Break ties by a seeded random strict order.
    Jitter { seed: u64 },
}

/// Ranks of `values` (1 = smallest).
pub fn rank_values(values: &[f64], ties: TiePolicy) -> Result<Vec<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let tied: Vec<usize> = {
        let mut out = Vec::new();
        for w in order.windows(2) {
            if values[w[0]] == values[w[1]] {
                out.push(w[0]);
                out.push(w[1]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    };

    if !tied.is_empty() {
        match ties {
            TiePolicy::Error => return Err(Error::Ties { indices: tied }),
            TiePolicy::Jitter { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keys: Vec<u64> = (0..n).map(|_| rng.random()).collect();
                order.sort_by(|&a, &b| {
                    values[a]
                        .total_cmp(&values[b])
                        .then(keys[a].cmp(&keys[b]))
                        .then(a.cmp(&b))
                });
            }
        }
    }

    let mut ranks = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    Ok(ranks)
}

/// Rank both coordinates. Under [`TiePolicy::Jitter`] the y-coordinate uses
/// a seed derived from (but distinct from) the x seed.
pub fn rank_sample(sample: &PairedSample, ties: TiePolicy) -> Result<RankedSample> {
    let y_ties = match ties {
        TiePolicy::Error => TiePolicy::Error,
        TiePolicy::Jitter { seed } => TiePolicy::Jitter {
            seed: seed ^ 0x9E37_79B9_7F4A_7C15,
        },
    };
    let r = rank_values(sample.x(), ties)?;
    let s = rank_values(sample.y(), y_ties)?;
    Ok(RankedSample { r, s })
}

/// Result of reading a CSV file.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub sample: PairedSample,
    pub warnings: Vec<String>,
}

/// Whether the first CSV row is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderMode {
    Present,
    Absent,
    /// Header if either of the first two cells of the first row is not a number.
    Auto,
}

/// Read the first two columns of a comma-separated file as `(x, y)`.
pub fn read_csv(path: impl AsRef<Path>, has_header: bool) -> Result<CsvData> {
    let mode = if has_header {
        HeaderMode::Present
    } else {
        HeaderMode::Absent
    };
    read_csv_with(path, mode)
}

pub fn read_csv_with(path: impl AsRef<Path>, header: HeaderMode) -> Result<CsvData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_from(file, header)
}

/// Reader-based variant of [`read_csv_with`].
pub fn read_csv_from(reader: impl std::io::Read, header: HeaderMode) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut warnings = Vec::new();
    let mut extra_columns = false;

    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if idx == 0 {
            let numeric = |c: usize| record.get(c).is_some_and(|s| parse_real(s).is_some());
            let is_header = match header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => !(numeric(0) && numeric(1)),
            };
            if is_header {
                if record.len() < 2 {
                    return Err(Error::Format(format!(
                        "header has {} column(s), need at least 2",
                        record.len()
                    )));
                }
                continue;
            }
        }
        if record.len() < 2 {
            return Err(Error::Format(format!(
                "row {row} has {} column(s), need at least 2",
                record.len()
            )));
        }
        if record.len() > 2 {
            extra_columns = true;
        }
        for (col, sink) in [(0usize, &mut x), (1, &mut y)] {
            let cell = &record[col];
            let v = parse_real(cell).ok_or_else(|| Error::Parse {
                row,
                col: col + 1,
                value: cell.to_string(),
            })?;
            sink.push(v);
        }
    }
    if extra_columns {
        warnings.push("columns beyond the second were ignored".to_string());
    }
    if x.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    Ok(CsvData {
        sample: PairedSample::new(x, y)?,
        warnings,
    })
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
