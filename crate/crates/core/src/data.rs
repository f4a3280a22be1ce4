//! Per-sample ensemble prediction records: loading, validation, filtering
//! and subsampling.
//!
//! Two on-disk layouts are supported. CSV carries a header
//! `sample_id,label,split,family,m0,...,m{T-1}`; JSONL carries one object per
//! line with keys `id`, `label`, `split`, `family` (nullable) and `scores`.
//! Scores are written with the shortest round-trip decimal representation, so
//! a load/write/load cycle is bit-exact.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Malicious)
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malicious => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

impl Format {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: Label,
    pub split: Split,
    pub family: Option<String>,
    pub member_scores: Vec<f64>,
}

impl SampleRecord {
    pub fn is_positive(&self) -> bool {
        self.label.is_positive()
    }
}

/// Immutable collection of records sharing one ensemble size.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDataset {
    records: Vec<SampleRecord>,
    member_count: usize,
    pub provenance: String,
}

impl PredictionDataset {
    /// Builds a dataset, checking every record invariant.
    pub fn new(
        records: Vec<SampleRecord>,
        member_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if member_count == 0 {
            return Err(Error::InvalidData("member count must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            validate_record(r, member_count, i + 1)?;
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    sample_id: r.sample_id.clone(),
                });
            }
        }
        Ok(Self {
            records,
            member_count,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn member_count(&self) -> usize {
        self.member_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(SampleRecord::is_positive).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.records.iter().filter(|r| r.is_positive()).count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// Scores of a single ensemble member across all records.
    pub fn member_column(&self, member: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.member_scores[member]).collect()
    }

    /// Records with the given split tag, in original order.
    pub fn filter_split(&self, split: Split) -> PredictionDataset {
        self.filter(|r| r.split == split)
    }

    pub fn filter(&self, mut keep: impl FnMut(&SampleRecord) -> bool) -> PredictionDataset {
        PredictionDataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            member_count: self.member_count,
            provenance: self.provenance.clone(),
        }
    }

    /// Uniform sample without replacement of `round_half_even(fraction * N)`
    /// records (at least one when the input is nonempty).
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<PredictionDataset> {
        let picked = subsample_indices(self.records.len(), fraction, seed)?;
        Ok(PredictionDataset {
            records: picked.into_iter().map(|i| self.records[i].clone()).collect(),
            member_count: self.member_count,
            provenance: format!("{} (subsample {fraction} seed {seed})", self.provenance),
        })
    }

    /// Row counts keyed by (split, label).
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for r in &self.records {
            let idx = Split::ALL.iter().position(|s| *s == r.split).unwrap();
            if r.is_positive() {
                c.malicious[idx] += 1;
            } else {
                c.benign[idx] += 1;
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitCounts {
    /// Indexed in [`Split::ALL`] order.
    pub benign: [usize; 3],
    pub malicious: [usize; 3],
}

/// Number of records kept by [`PredictionDataset::subsample`].
pub fn subsample_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let k = (fraction * n as f64).round_ties_even() as usize;
    Ok(if n > 0 { k.clamp(1, n) } else { 0 })
}

/// Indices selected by [`PredictionDataset::subsample`] for a dataset of
/// `n` records, in sampling order.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let k = subsample_size(n, fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, k).into_vec())
}

fn validate_record(r: &SampleRecord, member_count: usize, line: usize) -> Result<()> {
    if r.member_scores.len() != member_count {
        return Err(Error::InconsistentMemberCount {
            line,
            sample_id: r.sample_id.clone(),
            expected: member_count,
            found: r.member_scores.len(),
        });
    }
    if let Some(&value) = r.member_scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::ScoreOutOfRange {
            line,
            sample_id: r.sample_id.clone(),
            value,
        });
    }
    if let (Label::Benign, Some(family)) = (r.label, &r.family) {
        return Err(Error::BenignFamily {
            line,
            sample_id: r.sample_id.clone(),
            family: family.clone(),
        });
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<PredictionDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let provenance = path.display().to_string();
    match format {
        Format::Csv => read_csv(file, provenance),
        Format::Jsonl => read_jsonl(BufReader::new(file), provenance),
    }
}

const CSV_FIXED: [&str; 4] = ["sample_id", "label", "split", "family"];

pub fn read_csv<R: Read>(reader: R, provenance: impl Into<String>) -> Result<PredictionDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, name) in CSV_FIXED.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::MissingColumn((*name).to_string()));
        }
    }
    let member_count = header.len() - CSV_FIXED.len();
    if member_count == 0 {
        return Err(Error::MissingColumn("m0".into()));
    }
    for m in 0..member_count {
        let expected = format!("m{m}");
        if header.get(CSV_FIXED.len() + m) != Some(expected.as_str()) {
            return Err(Error::MissingColumn(expected));
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let sample_id = row.get(0).unwrap_or_default().to_string();
        if sample_id.is_empty() {
            return Err(parse_err(line, "sample_id", "empty sample id"));
        }
        let label = match row.get(1).map(str::trim) {
            Some("0") => Label::Benign,
            Some("1") => Label::Malicious,
            other => {
                return Err(parse_err(
                    line,
                    "label",
                    format!("expected 0 or 1, got `{}`", other.unwrap_or("")),
                ))
            }
        };
        let split = row
            .get(2)
            .unwrap_or_default()
            .trim()
            .parse::<Split>()
            .map_err(|e| parse_err(line, "split", e))?;
        let family = match row.get(3).unwrap_or_default() {
            "" => None,
            f => Some(f.to_string()),
        };
        let found = row.len().saturating_sub(CSV_FIXED.len());
        if found != member_count {
            return Err(Error::InconsistentMemberCount {
                line,
                sample_id,
                expected: member_count,
                found,
            });
        }
        let mut member_scores = Vec::with_capacity(member_count);
        for m in 0..member_count {
            let raw = row.get(CSV_FIXED.len() + m).unwrap_or_default().trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, &format!("m{m}"), format!("not a number: `{raw}`")))?;
            member_scores.push(v);
        }
        let record = SampleRecord {
            sample_id,
            label,
            split,
            family,
            member_scores,
        };
        validate_record(&record, member_count, line)?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(Error::DuplicateId {
                line,
                sample_id: record.sample_id,
            });
        }
        records.push(record);
    }
    Ok(PredictionDataset {
        records,
        member_count,
        provenance: provenance.into(),
    })
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    id: String,
    label: u8,
    split: Split,
    family: Option<String>,
    scores: Vec<f64>,
}

pub fn read_jsonl<R: BufRead>(reader: R, provenance: impl Into<String>) -> Result<PredictionDataset> {
    let mut records = Vec::new();
    let mut member_count = None;
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            // serde reports the key for missing fields; otherwise name the whole row
            let field = ["id", "label", "split", "family", "scores"]
                .into_iter()
                .find(|k| msg.contains(&format!("`{k}`")))
                .unwrap_or("row");
            parse_err(line_no, field, msg)
        })?;
        let label = Label::from_u8(row.label).ok_or_else(|| {
            parse_err(line_no, "label", format!("expected 0 or 1, got {}", row.label))
        })?;
        let t = *member_count.get_or_insert(row.scores.len());
        if t == 0 {
            return Err(parse_err(line_no, "scores", "empty score array"));
        }
        let record = SampleRecord {
            sample_id: row.id,
            label,
            split: row.split,
            family: row.family.filter(|f| !f.is_empty()),
            member_scores: row.scores,
        };
        validate_record(&record, t, line_no)?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                sample_id: record.sample_id,
            });
        }
        records.push(record);
    }
    let member_count =
        member_count.ok_or_else(|| Error::InvalidData("JSONL input contains no rows".into()))?;
    Ok(PredictionDataset {
        records,
        member_count,
        provenance: provenance.into(),
    })
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn write_csv<W: Write>(ds: &PredictionDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<String> = CSV_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.member_count).map(|m| format!("m{m}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in &ds.records {
        row.clear();
        row.push(r.sample_id.clone());
        row.push(r.label.as_u8().to_string());
        row.push(r.split.as_str().to_string());
        row.push(r.family.clone().unwrap_or_default());
        row.extend(r.member_scores.iter().map(|s| format!("{s:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(ds: &PredictionDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in &ds.records {
        let row = JsonRow {
            id: r.sample_id.clone(),
            label: r.label.as_u8(),
            split: r.split,
            family: r.family.clone(),
            scores: r.member_scores.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &PredictionDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let file = File::create(path)?;
    match format {
        Format::Csv => write_csv(ds, BufWriter::new(file)),
        Format::Jsonl => write_jsonl(ds, file),
    }
}
