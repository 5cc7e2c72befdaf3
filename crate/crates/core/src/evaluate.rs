//! Metrics for generated populations: SRMSE over marginal and bivariate
//! cells, combination-level precision and recall, zero classification, and
//! boundary-distance histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{encode, AttributeSchema, CombinationIndex, Record};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::geometry::{boundary_distance, ReferenceSet};
use crate::models::{generate, ModelArtifact};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrmseOrder {
    Marginal,
    Bivariate,
}

fn check_pair(a: &CombinationIndex, b: &CombinationIndex) -> Result<()> {
    if !a.same_layout(b) {
        return Err(Error::Schema(
            "indexes were built on different schemas".into(),
        ));
    }
    Ok(())
}

/// Cell probabilities. Marginal: every category of every attribute, in
/// layout order. Bivariate: for each attribute pair `k < k'`, every
/// `(c, c')` cell with `c'` varying fastest.
pub fn distribution_vector(
    index: &CombinationIndex,
    schema: &AttributeSchema,
    order: SrmseOrder,
) -> Result<Vec<f64>> {
    if index.is_empty() {
        return Err(Error::InvalidArgument("empty index".into()));
    }
    if index.radices() != schema.cardinalities().as_slice() {
        return Err(Error::Schema("index does not match schema".into()));
    }
    let cards = schema.cardinalities();
    let k = cards.len();
    let total = index.total() as f64;
    match order {
        SrmseOrder::Marginal => {
            let mut out = vec![0.0; schema.width()];
            for (rec, count) in index.unique_records() {
                for a in 0..k {
                    out[schema.offset(a) + rec.get(a)] += count as f64;
                }
            }
            Ok(out.into_iter().map(|c| c / total).collect())
        }
        SrmseOrder::Bivariate => {
            let mut offsets = Vec::new();
            let mut acc = 0;
            for a in 0..k {
                for b in a + 1..k {
                    offsets.push(acc);
                    acc += cards[a] * cards[b];
                }
            }
            let mut out = vec![0.0; acc];
            for (rec, count) in index.unique_records() {
                let mut p = 0;
                for a in 0..k {
                    for b in a + 1..k {
                        out[offsets[p] + rec.get(a) * cards[b] + rec.get(b)] += count as f64;
                        p += 1;
                    }
                }
            }
            Ok(out.into_iter().map(|c| c / total).collect())
        }
    }
}

/// `RMSE(π, π̂) / mean(π)` with `π` from `reference`.
pub fn srmse(
    reference: &CombinationIndex,
    generated: &CombinationIndex,
    schema: &AttributeSchema,
    order: SrmseOrder,
) -> Result<f64> {
    check_pair(reference, generated)?;
    let pi = distribution_vector(reference, schema, order)?;
    let pi_hat = distribution_vector(generated, schema, order)?;
    Ok(srmse_of(&pi, &pi_hat))
}

/// SRMSE of two aligned probability vectors.
pub fn srmse_of(pi: &[f64], pi_hat: &[f64]) -> f64 {
    assert_eq!(
        pi.len(),
        pi_hat.len(),
        "distribution vectors differ in length"
    );
    let n = pi.len() as f64;
    let mse = pi
        .iter()
        .zip(pi_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let mean = pi.iter().sum::<f64>() / n;
    mse.sqrt() / mean
}

/// Share of generated instances whose combination occurs in the population.
pub fn precision(generated: &CombinationIndex, population: &CombinationIndex) -> Result<f64> {
    check_pair(generated, population)?;
    if generated.is_empty() {
        return Err(Error::InvalidArgument("generated set is empty".into()));
    }
    let hit: u64 = generated
        .iter()
        .filter(|(key, _)| population.contains_key(*key))
        .map(|(_, c)| c)
        .sum();
    Ok(hit as f64 / generated.total() as f64)
}

/// Share of population instances whose combination was generated.
pub fn recall(population: &CombinationIndex, generated: &CombinationIndex) -> Result<f64> {
    check_pair(population, generated)?;
    if population.is_empty() {
        return Err(Error::InvalidArgument("population is empty".into()));
    }
    let hit: u64 = population
        .iter()
        .filter(|(key, _)| generated.contains_key(*key))
        .map(|(_, c)| c)
        .sum();
    Ok(hit as f64 / population.total() as f64)
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroClass {
    GeneralSample,
    SamplingZero,
    StructuralZero,
}

impl ZeroClass {
    pub const ALL: [ZeroClass; 3] = [
        ZeroClass::GeneralSample,
        ZeroClass::SamplingZero,
        ZeroClass::StructuralZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ZeroClass::GeneralSample => "general_sample",
            ZeroClass::SamplingZero => "sampling_zero",
            ZeroClass::StructuralZero => "structural_zero",
        }
    }
}

/// Rates of each class among generated instances, plus the share of sample
/// combinations that were never generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroRates {
    pub general_sample: f64,
    pub sampling_zero: f64,
    pub structural_zero: f64,
    pub missing_sample: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroClassification {
    pub labels: Vec<ZeroClass>,
    pub rates: ZeroRates,
}

fn check_sample_in_population(
    sample: &CombinationIndex,
    population: &CombinationIndex,
) -> Result<()> {
    check_pair(sample, population)?;
    if sample.iter().any(|(k, _)| !population.contains_key(k)) {
        return Err(Error::InvalidArgument(
            "sample contains combinations absent from the population".into(),
        ));
    }
    Ok(())
}

fn class_of(key: u128, sample: &CombinationIndex, population: &CombinationIndex) -> ZeroClass {
    if sample.contains_key(key) {
        ZeroClass::GeneralSample
    } else if population.contains_key(key) {
        ZeroClass::SamplingZero
    } else {
        ZeroClass::StructuralZero
    }
}

pub fn classify_zeros(
    generated: &[Record],
    sample: &CombinationIndex,
    population: &CombinationIndex,
) -> Result<ZeroClassification> {
    check_sample_in_population(sample, population)?;
    if generated.is_empty() {
        return Err(Error::InvalidArgument("generated set is empty".into()));
    }
    let mut labels = Vec::with_capacity(generated.len());
    let mut counts = [0usize; 3];
    let mut seen = std::collections::HashSet::new();
    for r in generated {
        let key = sample.checked_key(r)?;
        let class = class_of(key, sample, population);
        counts[class as usize] += 1;
        labels.push(class);
        if class == ZeroClass::GeneralSample {
            seen.insert(key);
        }
    }
    let m = generated.len() as f64;
    let rates = ZeroRates {
        general_sample: counts[0] as f64 / m,
        sampling_zero: counts[1] as f64 / m,
        structural_zero: counts[2] as f64 / m,
        missing_sample: if sample.unique_count() == 0 {
            0.0
        } else {
            (sample.unique_count() - seen.len()) as f64 / sample.unique_count() as f64
        },
    };
    Ok(ZeroClassification { labels, rates })
}

/// Recall of each prefix `generated[..size]`; sizes must be ascending and at
/// most `generated.len()`.
pub fn recall_curve(
    generated: &[Record],
    population: &CombinationIndex,
    sizes: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("sizes must be ascending".into()));
    }
    if sizes.last().is_some_and(|&s| s > generated.len()) {
        return Err(Error::InvalidArgument(
            "size exceeds generated count".into(),
        ));
    }
    if population.is_empty() {
        return Err(Error::InvalidArgument("population is empty".into()));
    }
    let mut covered = std::collections::HashSet::new();
    let mut hit = 0u64;
    let mut next = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        while next < size {
            let key = population.checked_key(&generated[next])?;
            if covered.insert(key) {
                hit += population.count(key);
            }
            next += 1;
        }
        out.push((size, hit as f64 / population.total() as f64));
    }
    Ok(out)
}

/// Recall at increasing generated sizes. One batch of the largest size is
/// drawn; smaller sizes are its prefixes, which is exactly what generating
/// them separately with the same seed would produce.
pub fn recall_vs_size(
    artifact: &ModelArtifact,
    population: &CombinationIndex,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let max = *sizes
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no sizes given".into()))?;
    let generated = generate(artifact, max, seed)?;
    recall_curve(&generated, population, sizes)
}

/// Boundary-distance histograms of generated rows, one per zero class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistograms {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<u64>>,
    /// Instance-weighted mean distance per class, absent for empty classes.
    pub means: BTreeMap<String, Option<f64>>,
}

impl DistanceHistograms {
    pub fn mean(&self, class: ZeroClass) -> Option<f64> {
        self.means.get(class.name()).copied().flatten()
    }

    /// Long format: `class,bin_lower,bin_upper,count`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["class", "bin_lower", "bin_upper", "count"])?;
        for class in ZeroClass::ALL {
            for (i, c) in self.counts[class.name()].iter().enumerate() {
                csv.write_record([
                    class.name().to_string(),
                    self.edges[i].to_string(),
                    self.edges[i + 1].to_string(),
                    c.to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}

/// Distance from each generated row to the nearest sample row (in the
/// reference's space), bucketed per zero class into `bins` equal-width bins
/// spanning `[0, max distance]`.
pub fn distance_histograms(
    generated: &[Record],
    schema: &AttributeSchema,
    reference: &ReferenceSet,
    embedder: Option<&Embedder>,
    sample: &CombinationIndex,
    population: &CombinationIndex,
    bins: usize,
) -> Result<DistanceHistograms> {
    check_sample_in_population(sample, population)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let gen = CombinationIndex::build(generated, schema)?;
    let unique = gen.unique_records();
    if unique.is_empty() {
        return Err(Error::InvalidArgument("generated set is empty".into()));
    }
    let rows: Vec<Record> = unique.iter().map(|(r, _)| r.clone()).collect();
    let mut x = encode(&rows, schema)?.into_values();
    if let Some(e) = embedder {
        x = e.embed(&x)?;
    }
    let dist = boundary_distance(&x, reference)?;
    let max = dist.iter().cloned().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();

    let mut counts: BTreeMap<String, Vec<u64>> = ZeroClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), vec![0; bins]))
        .collect();
    let mut sums = [(0.0, 0u64); 3];
    for ((rec, count), d) in unique.iter().zip(&dist) {
        let class = class_of(sample.checked_key(rec)?, sample, population);
        let bin = ((d / width) as usize).min(bins - 1);
        counts.get_mut(class.name()).expect("class")[bin] += count;
        sums[class as usize].0 += d * *count as f64;
        sums[class as usize].1 += count;
    }
    let means = ZeroClass::ALL
        .iter()
        .map(|&c| {
            let (s, n) = sums[c as usize];
            (c.name().to_string(), (n > 0).then(|| s / n as f64))
        })
        .collect();
    Ok(DistanceHistograms {
        edges,
        counts,
        means,
    })
}

/// One evaluated generated population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub space: String,
    pub regularization: String,
    pub marginal_srmse: f64,
    pub bivariate_srmse: f64,
    pub n_combinations: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub zero_rates: ZeroRates,
    pub generated_size: usize,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "model",
        "space",
        "regularization",
        "marg_srmse",
        "bivar_srmse",
        "n_combinations",
        "recall",
        "precision",
        "f1",
    ];

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.model.clone(),
            self.space.clone(),
            self.regularization.clone(),
            self.marginal_srmse.to_string(),
            self.bivariate_srmse.to_string(),
            self.n_combinations.to_string(),
            self.recall.to_string(),
            self.precision.to_string(),
            self.f1.to_string(),
        ]
    }
}

/// Row labels of an [`EvalReport`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportLabels {
    pub model: String,
    pub space: String,
    pub regularization: String,
    pub metadata: BTreeMap<String, String>,
}

/// All metrics of `generated` against the population; SRMSE uses the
/// population as reference.
pub fn evaluate_records(
    generated: &[Record],
    schema: &AttributeSchema,
    sample: &CombinationIndex,
    population: &CombinationIndex,
    labels: ReportLabels,
) -> Result<EvalReport> {
    let gen = CombinationIndex::build(generated, schema)?;
    let zeros = classify_zeros(generated, sample, population)?;
    let p = precision(&gen, population)?;
    let r = recall(population, &gen)?;
    Ok(EvalReport {
        model: labels.model,
        space: labels.space,
        regularization: labels.regularization,
        marginal_srmse: srmse(population, &gen, schema, SrmseOrder::Marginal)?,
        bivariate_srmse: srmse(population, &gen, schema, SrmseOrder::Bivariate)?,
        n_combinations: gen.unique_count(),
        recall: r,
        precision: p,
        f1: f1(p, r),
        zero_rates: zeros.rates,
        generated_size: generated.len(),
        metadata: labels.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema1() -> AttributeSchema {
        AttributeSchema::from_cardinalities(&[4]).unwrap()
    }

    fn idx(values: &[u16]) -> CombinationIndex {
        let recs: Vec<Record> = values.iter().map(|&v| Record::new(vec![v])).collect();
        CombinationIndex::build(&recs, &schema1()).unwrap()
    }

    #[test]
    fn srmse_hand_example() {
        let s = AttributeSchema::from_cardinalities(&[2]).unwrap();
        let build = |a: usize, b: usize| {
            let mut r = vec![Record::new(vec![0]); a];
            r.extend(vec![Record::new(vec![1]); b]);
            CombinationIndex::build(&r, &s).unwrap()
        };
        let v = srmse(&build(5, 5), &build(6, 4), &s, SrmseOrder::Marginal).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
        assert_eq!(
            srmse(&build(5, 5), &build(5, 5), &s, SrmseOrder::Marginal).unwrap(),
            0.0
        );
    }

    #[test]
    fn precision_and_recall_counts() {
        // A=0, B=1, C=2, D=3
        let pop = idx(&[0, 0, 1, 2]);
        assert!((precision(&idx(&[0, 0, 3]), &idx(&[0, 1, 2])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall(&pop, &idx(&[0, 2])).unwrap(), 0.75);
        assert_eq!(precision(&idx(&[0, 1]), &pop).unwrap(), 1.0);
        assert_eq!(recall(&pop, &idx(&[0, 1, 2])).unwrap(), 1.0);
    }

    #[test]
    fn f1_values() {
        assert!((f1(0.890, 0.747) - 0.812).abs() < 5e-4);
        assert!((f1(1.0, 0.564) - 0.721).abs() < 5e-4);
        assert_eq!(f1(0.3, 0.3), 0.3);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn zero_classes_on_a_toy() {
        let sample = idx(&[0]);
        let pop = idx(&[0, 1]);
        let gen: Vec<Record> = [0u16, 1, 3].iter().map(|&v| Record::new(vec![v])).collect();
        let z = classify_zeros(&gen, &sample, &pop).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(
            (
                z.rates.general_sample,
                z.rates.sampling_zero,
                z.rates.structural_zero
            ),
            (third, third, third)
        );
        assert_eq!(z.rates.missing_sample, 0.0);
        assert!(classify_zeros(&gen, &idx(&[3]), &pop).is_err());
    }

    #[test]
    fn recall_curve_grows() {
        let pop = idx(&[0, 0, 1, 2, 3]);
        let gen: Vec<Record> = [0u16, 0, 1, 3, 2]
            .iter()
            .map(|&v| Record::new(vec![v]))
            .collect();
        let c = recall_curve(&gen, &pop, &[1, 2, 3, 5]).unwrap();
        assert_eq!(c, vec![(1, 0.4), (2, 0.4), (3, 0.6), (5, 1.0)]);
    }

    #[test]
    fn histogram_of_hand_placed_rows() {
        let s = AttributeSchema::from_cardinalities(&[2, 3]).unwrap();
        let rec = |a, b| Record::new(vec![a, b]);
        let sample_recs = vec![rec(0, 0)];
        let sample = CombinationIndex::build(&sample_recs, &s).unwrap();
        let pop = CombinationIndex::build(&[rec(0, 0), rec(0, 1)], &s).unwrap();
        let reference = ReferenceSet::from_records(&sample_recs, &s).unwrap();
        // distances: general 0, sampling zero √2, structural zero 2
        let gen = vec![rec(0, 0), rec(0, 0), rec(0, 1), rec(1, 1)];
        let h = distance_histograms(&gen, &s, &reference, None, &sample, &pop, 2).unwrap();
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0]);
        assert_eq!(h.counts["general_sample"], vec![2, 0]);
        assert_eq!(h.counts["sampling_zero"], vec![0, 1]);
        assert_eq!(h.counts["structural_zero"], vec![0, 1]);
        assert_eq!(h.mean(ZeroClass::GeneralSample), Some(0.0));
        assert!((h.mean(ZeroClass::SamplingZero).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(h.mean(ZeroClass::StructuralZero), Some(2.0));
    }
}
