use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Count,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub bin_count: usize,
    pub lo: f64,
    pub hi: f64,
    pub normalization: Normalization,
}

impl HistogramSpec {
    /// `[0, ln 2]`, the range of binary entropy in nats.
    pub fn entropy_range(bin_count: usize, normalization: Normalization) -> Self {
        Self {
            bin_count,
            lo: 0.0,
            hi: std::f64::consts::LN_2,
            normalization,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bin_count == 0 || !(self.lo < self.hi) {
            return Err(Error::arg(format!(
                "histogram needs at least one bin and lo < hi (got {} bins on [{}, {}])",
                self.bin_count, self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: HistogramSpec,
    /// Counts or densities per bin, depending on the normalization.
    pub values: Vec<f64>,
    pub underflow: usize,
    pub overflow: usize,
    pub total: usize,
}

impl Histogram {
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.spec.hi - self.spec.lo) / self.spec.bin_count as f64;
        let lo = self.spec.lo + k as f64 * w;
        let hi = if k + 1 == self.spec.bin_count {
            self.spec.hi
        } else {
            self.spec.lo + (k + 1) as f64 * w
        };
        (lo, hi)
    }

    /// Writes `bin_lo,bin_hi,count_or_density`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["bin_lo", "bin_hi", "count_or_density"])?;
        for (k, v) in self.values.iter().enumerate() {
            let (lo, hi) = self.bin_edges(k);
            w.write_record([format!("{lo:?}"), format!("{hi:?}"), format!("{v:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bins are half-open `[lo + k w, lo + (k+1) w)` except the last, which is
/// closed. Values outside `[lo, hi]` land in underflow/overflow; densities
/// are normalized by the total count including them.
pub fn histogram(values: &[f64], spec: HistogramSpec) -> Result<Histogram> {
    spec.validate()?;
    let width = (spec.hi - spec.lo) / spec.bin_count as f64;
    let mut counts = vec![0usize; spec.bin_count];
    let (mut underflow, mut overflow) = (0, 0);
    for &v in values {
        if v < spec.lo {
            underflow += 1;
        } else if v > spec.hi || v.is_nan() {
            overflow += 1;
        } else {
            let k = (((v - spec.lo) / width) as usize).min(spec.bin_count - 1);
            counts[k] += 1;
        }
    }
    let total = values.len();
    let values = match spec.normalization {
        Normalization::Count => counts.iter().map(|&c| c as f64).collect(),
        Normalization::Density if total > 0 => counts
            .iter()
            .map(|&c| c as f64 / (total as f64 * width))
            .collect(),
        Normalization::Density => vec![0.0; spec.bin_count],
    };
    Ok(Histogram {
        spec,
        values,
        underflow,
        overflow,
        total,
    })
}
