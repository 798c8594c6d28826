//! Sequence-based place retrieval over excitation latents.
//!
//! A query is a run of consecutive excitation vectors. It is matched
//! against every reference run by the cosine of the two stacked matrices:
//! `C = Σ A_ij B_ij / (‖A‖_F ‖B‖_F)`.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_SEQUENCE_LEN: usize = 5;
pub const REPORT_THRESHOLDS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const HISTOGRAM_BIN_M: f64 = 0.25;

/// Consecutive excitation vectors (row-major, `len x k`) and the ground
/// truth position of the middle one.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub len: usize,
    pub k: usize,
    pub rows: Vec<f64>,
    pub coord: (f64, f64),
}

impl LatentSequence {
    pub fn new(len: usize, k: usize, rows: Vec<f64>, coord: (f64, f64)) -> Result<Self> {
        if len == 0 || k == 0 || rows.len() != len * k {
            return Err(shape_err("latent_sequence", format!("{} values for {len}x{k}", rows.len())));
        }
        Ok(Self { len, k, rows, coord })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }
}

/// Cosine similarity of two equally shaped sequences, in `[-1, 1]`.
pub fn cosine_similarity_seq(a: &LatentSequence, b: &LatentSequence) -> Result<f64> {
    if a.len != b.len || a.k != b.k {
        return Err(shape_err(
            "cosine_similarity_seq",
            format!("{}x{} vs {}x{}", a.len, a.k, b.len, b.k),
        ));
    }
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroSequence);
    }
    let dot: f64 = a.rows.iter().zip(&b.rows).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Overlapping sequences (stride 1) from time-ordered per-sample vectors:
/// `n - len + 1` of them, each tagged with its middle sample's position.
pub fn build_sequences(
    latents: &Tensor,
    k: usize,
    coords: &[(f64, f64)],
    len: usize,
) -> Result<Vec<LatentSequence>> {
    let s = latents.shape();
    if s.len() != 2 || s[0] != coords.len() || k == 0 || k > s[1] {
        return Err(shape_err(
            "build_sequences",
            format!("latents {s:?}, {} coordinates, k = {k}", coords.len()),
        ));
    }
    let n = s[0];
    if len == 0 || n < len {
        return Err(Error::TooFewSamples { need: len.max(1), got: n });
    }
    (0..=n - len)
        .map(|start| {
            let rows = (start..start + len).flat_map(|i| latents.row(i)[..k].iter().copied()).collect();
            LatentSequence::new(len, k, rows, coords[start + len / 2])
        })
        .collect()
}

/// Immutable set of reference sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDatabase {
    sequences: Vec<LatentSequence>,
}

impl ReferenceDatabase {
    pub fn new(sequences: Vec<LatentSequence>) -> Result<Self> {
        if let Some(first) = sequences.first() {
            if sequences.iter().any(|s| s.len != first.len || s.k != first.k) {
                return Err(shape_err("reference_db", "sequences differ in shape"));
            }
        }
        Ok(Self { sequences })
    }

    /// References from the first `k` entries of each sample's `mu`.
    pub fn build(mu: &Tensor, k: usize, coords: &[(f64, f64)], len: usize) -> Result<Self> {
        Self::new(build_sequences(mu, k, coords, len)?)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[LatentSequence] {
        &self.sequences
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub coord: (f64, f64),
    pub similarity: f64,
    pub index: usize,
}

/// Exhaustive scan; the lowest index wins ties.
pub fn localize(query: &LatentSequence, db: &ReferenceDatabase) -> Result<Match> {
    let mut best: Option<Match> = None;
    for (index, r) in db.sequences.iter().enumerate() {
        let similarity = cosine_similarity_seq(query, r)?;
        if best.map_or(true, |b| similarity > b.similarity) {
            best = Some(Match {
                coord: r.coord,
                similarity,
                index,
            });
        }
    }
    best.ok_or(Error::TooFewSamples { need: 1, got: 0 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationReport {
    /// Euclidean error per query, in metres.
    pub errors: Vec<f64>,
    pub matches: Vec<usize>,
    /// `(threshold_m, fraction of errors strictly below it)`.
    pub frac_below: Vec<(f64, f64)>,
    /// `(bin_lo_m, bin_hi_m, count)`; bins are half-open.
    pub histogram: Vec<(f64, f64, usize)>,
}

impl LocalizationReport {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        fraction_below(&self.errors, threshold)
    }

    pub fn write_csvs(&self, fractions: &Path, histogram: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(fractions)?;
        w.write_record(["threshold_m", "fraction"])?;
        for (t, f) in &self.frac_below {
            w.write_record(&[t.to_string(), f.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(histogram)?;
        w.write_record(["bin_lo_m", "bin_hi_m", "count"])?;
        for (lo, hi, c) in &self.histogram {
            w.write_record(&[lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fraction_below(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// Localizes every query (in parallel) and summarizes the errors against
/// each query's own middle coordinate.
pub fn localization_report(queries: &[LatentSequence], db: &ReferenceDatabase) -> Result<LocalizationReport> {
    let found: Vec<Match> = queries.par_iter().map(|q| localize(q, db)).collect::<Result<_>>()?;
    let errors: Vec<f64> = found
        .iter()
        .zip(queries)
        .map(|(m, q)| (m.coord.0 - q.coord.0).hypot(m.coord.1 - q.coord.1))
        .collect();
    let frac_below = REPORT_THRESHOLDS.iter().map(|&t| (t, fraction_below(&errors, t))).collect();
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let bins = ((max / HISTOGRAM_BIN_M).floor() as usize + 1).max(1);
    let mut histogram: Vec<(f64, f64, usize)> = (0..bins)
        .map(|i| (i as f64 * HISTOGRAM_BIN_M, (i + 1) as f64 * HISTOGRAM_BIN_M, 0))
        .collect();
    for &e in &errors {
        histogram[((e / HISTOGRAM_BIN_M).floor() as usize).min(bins - 1)].2 += 1;
    }
    Ok(LocalizationReport {
        errors,
        matches: found.iter().map(|m| m.index).collect(),
        frac_below,
        histogram,
    })
}
