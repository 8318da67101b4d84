//! Binary detection scoring and equal error rate computation.
//!
//! Scores are oriented "higher means more bonafide" everywhere in the crate.
//! The EER sweep walks the sorted unique scores; at threshold t,
//! `FRR(t)` is the fraction of bonafide trials scoring below t and `FAR(t)`
//! the fraction of spoof trials scoring at or above t. The crossing FAR = FRR
//! is resolved by linear interpolation between the two adjacent sweep points
//! that bracket it, with ties broken toward the smaller threshold.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::BinaryLabel;
use crate::error::{Error, Result};

/// One scored trial.
#[derive(Debug, Clone)]
pub struct ScoredTrial {
    pub id: String,
    pub score: f64,
    pub truth: BinaryLabel,
}

/// Equal error rate plus the threshold achieving it and the trial counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

/// Computes the equal error rate by an exact threshold sweep.
pub fn compute_eer(trials: &[ScoredTrial]) -> Result<EerResult> {
    let mut bona: Vec<f64> = Vec::new();
    let mut spoof: Vec<f64> = Vec::new();
    for t in trials {
        if !t.score.is_finite() {
            return Err(Error::NonFinite { op: "compute_eer" });
        }
        match t.truth {
            BinaryLabel::Bonafide => bona.push(t.score),
            BinaryLabel::Spoof => spoof.push(t.score),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::InvalidConfig(
            "compute_eer needs at least one bonafide and one spoof trial".into(),
        ));
    }
    bona.sort_by(|a, b| a.partial_cmp(b).unwrap());
    spoof.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = bona.iter().chain(spoof.iter()).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    // Virtual end point above every score: everything rejected.
    let end = thresholds.last().unwrap() + 1.0;
    thresholds.push(end);

    let frr_at = |t: f64| count_below(&bona, t) as f64 / bona.len() as f64;
    let far_at = |t: f64| (spoof.len() - count_below(&spoof, t)) as f64 / spoof.len() as f64;

    // diff = FAR - FRR is non-increasing along the sweep; it starts at +1
    // (everything accepted) and ends at -1 (everything rejected).
    let mut prev_t = thresholds[0];
    let mut prev_frr = frr_at(prev_t);
    let mut prev_far = far_at(prev_t);
    for &t in &thresholds {
        let frr = frr_at(t);
        let far = far_at(t);
        let diff = far - frr;
        if diff == 0.0 {
            // Exact crossing at a sweep point; the scan order makes this the
            // smallest such threshold.
            return Ok(EerResult {
                eer: frr,
                threshold: t,
                n_bonafide: bona.len(),
                n_spoof: spoof.len(),
            });
        }
        if diff < 0.0 {
            // Crossing lies strictly between the previous point and this one.
            let prev_diff = prev_far - prev_frr;
            let lambda = prev_diff / (prev_diff - diff);
            let eer = prev_frr + lambda * (frr - prev_frr);
            let threshold = prev_t + lambda * (t - prev_t);
            return Ok(EerResult {
                eer,
                threshold,
                n_bonafide: bona.len(),
                n_spoof: spoof.len(),
            });
        }
        prev_t = t;
        prev_frr = frr;
        prev_far = far;
    }
    unreachable!("diff reaches -1 at the virtual end threshold");
}

fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s < t)
}

/// Mean, sample standard deviation (n−1 denominator, 0 when n = 1), and count.
pub fn summarize_repeats(eers: &[f64]) -> Result<(f64, f64, usize)> {
    if eers.is_empty() {
        return Err(Error::InvalidConfig("summarize_repeats: empty input".into()));
    }
    let n = eers.len();
    let mean = eers.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let var = eers.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    Ok((mean, std, n))
}

/// Writes trials as a `id,score,truth` CSV.
pub fn save_scores(trials: &[ScoredTrial], path: &Path) -> Result<()> {
    let mut out = String::from("id,score,truth\n");
    for t in trials {
        out.push_str(&format!("{},{},{}\n", t.id, t.score, t.truth));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a `id,score,truth` CSV, so externally produced scores can reuse the
/// metric suite.
pub fn load_scores(path: &Path) -> Result<Vec<ScoredTrial>> {
    let text = fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "id,score,truth" {
                return Err(Error::Parse {
                    line: 1,
                    message: "header must be id,score,truth".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let score: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad score {:?}", fields[1]),
        })?;
        let truth = BinaryLabel::parse(fields[2]).ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("unknown truth label {:?}", fields[2]),
        })?;
        trials.push(ScoredTrial {
            id: fields[0].to_string(),
            score,
            truth,
        });
    }
    Ok(trials)
}
