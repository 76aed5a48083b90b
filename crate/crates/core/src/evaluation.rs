//! Hop curves, input preservation and ablation comparison.
//!
//! Scores use pixel-level measures: domain membership comes from the analytic
//! oracle of a synthetic family and similarity is `1 - L1/2` over pixels. No
//! learned perceptual metric or segmentation network is involved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domains::{domain_oracle_score, DomainLabel, FamilyId, Image, SyntheticFamily, UnpairedDataset};
use crate::error::{Error, Result};
use crate::inference::{translate_with_bundle, TranslationRequest};
use crate::losses::Direction;
use crate::networks::ModelBundle;

/// Header note of every serialized report.
pub const METRIC_NOTE: &str = "membership = analytic synthetic-domain oracle; preservation = 1 - mean|input - output|/2 over pixels; smoothness proxy = mean |hop k+1 - hop k| over pixels. No learned perceptual similarity or segmentation network is used.";

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated mean; `NaN` for an empty input.
pub fn compensated_mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Mean oracle score of a set of images.
pub fn mean_oracle_score<'a>(images: impl IntoIterator<Item = &'a Image>, family: &SyntheticFamily) -> Result<f64> {
    let scores = images
        .into_iter()
        .map(|img| domain_oracle_score(img, family))
        .collect::<Result<Vec<_>>>()?;
    if scores.is_empty() {
        return Err(Error::Contract("no images to score".into()));
    }
    Ok(compensated_mean(&scores))
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    compensated_sum(
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(&p, &q)| f64::from((p - q).abs())),
    ) / a.pixels().len() as f64
}

/// `1 - mean|input - output| / 2`, in `[0, 1]` for pixels in `[-1, 1]`.
pub fn preservation_score(inputs: &[Image], outputs: &[Image]) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != outputs.len() {
        return Err(Error::Contract(format!(
            "preservation needs equal non-empty lists, got {} and {}",
            inputs.len(),
            outputs.len()
        )));
    }
    let mut per_pixel = Vec::with_capacity(inputs.len());
    for (a, b) in inputs.iter().zip(outputs) {
        if !a.same_shape(b) {
            return Err(Error::Contract("input and output shapes differ".into()));
        }
        per_pixel.push(mean_abs_diff(a, b));
    }
    Ok((1.0 - compensated_mean(&per_pixel) / 2.0).clamp(0.0, 1.0))
}

/// Mean oracle score at each hop, index 0 being the raw inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopCurve {
    pub means: Vec<f64>,
    pub samples: usize,
    pub family: FamilyId,
    pub direction: Direction,
}

/// Full evaluation of one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub curve: HopCurve,
    /// Similarity between inputs and final hops.
    pub preservation: f64,
    /// Mean oracle score of the final hops.
    pub membership: f64,
    /// Mean |hop k+1 - hop k| per pixel, for `k = 0..hops`.
    pub inter_hop_l1: Vec<f64>,
}

impl DirectionReport {
    /// Mean of `inter_hop_l1`; 0 for zero hops.
    pub fn smoothness(&self) -> f64 {
        if self.inter_hop_l1.is_empty() {
            0.0
        } else {
            compensated_mean(&self.inter_hop_l1)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: Option<PathBuf>,
    pub config_hash: String,
    pub trained_hops: usize,
    pub eval_hops: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub note: String,
    pub provenance: Provenance,
    pub directions: Vec<DirectionReport>,
}

impl EvalReport {
    pub fn direction(&self, d: Direction) -> Option<&DirectionReport> {
        self.directions.iter().find(|r| r.curve.direction == d)
    }

    /// Preservation averaged over the evaluated directions.
    pub fn preservation(&self) -> f64 {
        compensated_mean(&self.directions.iter().map(|r| r.preservation).collect::<Vec<_>>())
    }

    /// Smoothness proxy averaged over the evaluated directions.
    pub fn smoothness(&self) -> f64 {
        compensated_mean(
            &self
                .directions
                .iter()
                .map(DirectionReport::smoothness)
                .collect::<Vec<_>>(),
        )
    }

    /// Inter-hop L1 per hop step, averaged over directions.
    pub fn inter_hop_l1(&self) -> Vec<f64> {
        let steps = self.directions.iter().map(|r| r.inter_hop_l1.len()).min().unwrap_or(0);
        (0..steps)
            .map(|k| compensated_mean(&self.directions.iter().map(|r| r.inter_hop_l1[k]).collect::<Vec<_>>()))
            .collect()
    }
}

fn direction_of(label: DomainLabel) -> Direction {
    match label {
        DomainLabel::X => Direction::XToY,
        DomainLabel::Y => Direction::YToX,
    }
}

fn check_family(dataset: &UnpairedDataset, family: &SyntheticFamily) -> Result<()> {
    let (h, w) = dataset.image_shape();
    if h != family.image_size || w != family.image_size {
        return Err(Error::Contract(format!(
            "dataset images are {h}x{w}, family expects {0}x{0}",
            family.image_size
        )));
    }
    Ok(())
}

/// Translates every item `n_hops` hops (X items with G, Y items with F) and
/// scores each hop.
pub fn evaluate_direction(
    bundle: &ModelBundle,
    dataset: &UnpairedDataset,
    family: &SyntheticFamily,
    n_hops: usize,
) -> Result<DirectionReport> {
    check_family(dataset, family)?;
    let direction = direction_of(dataset.label());
    let request = TranslationRequest {
        direction,
        hops: Some(n_hops),
        emit_intermediates: true,
    };
    let seqs = translate_with_bundle(bundle, dataset.items(), &request)?;
    let at = |k: usize| seqs.iter().map(move |s| &s.frames[k].1);
    let means = (0..=n_hops)
        .map(|k| mean_oracle_score(at(k), family))
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<Image> = at(n_hops).cloned().collect();
    let preservation = preservation_score(dataset.items(), &finals)?;
    let inter_hop_l1 = (0..n_hops)
        .map(|k| {
            let d: Vec<f64> = seqs
                .iter()
                .map(|s| mean_abs_diff(&s.frames[k].1, &s.frames[k + 1].1))
                .collect();
            compensated_mean(&d)
        })
        .collect();
    Ok(DirectionReport {
        membership: means[n_hops],
        curve: HopCurve {
            means,
            samples: dataset.len(),
            family: family.family_id,
            direction,
        },
        preservation,
        inter_hop_l1,
    })
}

pub fn hop_curve(
    bundle: &ModelBundle,
    dataset: &UnpairedDataset,
    family: &SyntheticFamily,
    n_hops: usize,
) -> Result<HopCurve> {
    evaluate_direction(bundle, dataset, family, n_hops).map(|r| r.curve)
}

/// Evaluates every given dataset (one per direction) with the same hop count.
pub fn evaluate(
    bundle: &ModelBundle,
    datasets: &[&UnpairedDataset],
    family: &SyntheticFamily,
    n_hops: usize,
    checkpoint: Option<&Path>,
) -> Result<EvalReport> {
    let directions = datasets
        .iter()
        .map(|ds| evaluate_direction(bundle, ds, family, n_hops))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        note: METRIC_NOTE.to_string(),
        provenance: Provenance {
            checkpoint: checkpoint.map(Path::to_path_buf),
            config_hash: bundle.metadata.config_hash.clone(),
            trained_hops: bundle.trained_hops,
            eval_hops: n_hops,
        },
        directions,
    })
}

/// `b - a` for one scalar metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

impl MetricDelta {
    fn new(a: f64, b: f64) -> Self {
        Self { a, b, delta: b - a }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionDelta {
    pub direction: Direction,
    pub preservation: MetricDelta,
    pub membership: MetricDelta,
    pub smoothness: MetricDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationComparison {
    pub preservation: MetricDelta,
    pub smoothness: MetricDelta,
    pub directions: Vec<DirectionDelta>,
    /// Per-hop-step mean inter-hop L1 of each report.
    pub inter_hop_l1_a: Vec<f64>,
    pub inter_hop_l1_b: Vec<f64>,
}

/// Deltas `b - a` for every metric both reports share.
pub fn compare_ablations(a: &EvalReport, b: &EvalReport) -> AblationComparison {
    let directions = a
        .directions
        .iter()
        .filter_map(|ra| {
            let d = ra.curve.direction;
            b.direction(d).map(|rb| DirectionDelta {
                direction: d,
                preservation: MetricDelta::new(ra.preservation, rb.preservation),
                membership: MetricDelta::new(ra.membership, rb.membership),
                smoothness: MetricDelta::new(ra.smoothness(), rb.smoothness()),
            })
        })
        .collect();
    AblationComparison {
        preservation: MetricDelta::new(a.preservation(), b.preservation()),
        smoothness: MetricDelta::new(a.smoothness(), b.smoothness()),
        directions,
        inter_hop_l1_a: a.inter_hop_l1(),
        inter_hop_l1_b: b.inter_hop_l1(),
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "hop_curve.csv";

/// Writes `report.json` and `hop_curve.csv` (`direction,hop,mean_score`).
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;

    let csv = out_dir.join(CURVE_FILE);
    let mut table = String::from("direction,hop,mean_score\n");
    for r in &report.directions {
        let d = serde_json::to_value(r.curve.direction).expect("direction serializes");
        for (k, m) in r.curve.means.iter().enumerate() {
            table.push_str(&format!("{},{k},{m}\n", d.as_str().unwrap_or_default()));
        }
    }
    std::fs::write(&csv, table).map_err(|e| Error::io(&csv, e))?;
    Ok((json, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn preservation_endpoints() {
        let a = Image::filled(4, 4, 1.0).unwrap();
        let b = Image::filled(4, 4, -1.0).unwrap();
        assert_eq!(preservation_score(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 1.0);
        assert_eq!(preservation_score(&[a], &[b]).unwrap(), 0.0);
        assert!(preservation_score(&[], &[]).is_err());
    }
}
