//! Non-neural baselines: resampling the sample itself, and a Bayesian
//! network learned by greedy hill climbing on BIC.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    synth_population, topological_order, AttributeSchema, CombinationIndex, PopulationSpec, Record,
};
use crate::diffcore::rng_from_seed;
use crate::error::{Error, Result};

/// `n` draws with replacement, equal weights.
pub fn reweight_generate(sample: &[Record], n: usize, seed: u64) -> Result<Vec<Record>> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot resample an empty sample".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| sample[rng.random_range(0..sample.len())].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnConfig {
    pub max_parents: usize,
    pub max_iters: usize,
    /// Laplace pseudo-count for the fitted tables.
    pub alpha: f64,
    /// Kept for the run record; the search is deterministic.
    pub seed: u64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            max_parents: 3,
            max_iters: 1000,
            alpha: 1.0,
            seed: 0,
        }
    }
}

/// DAG over the schema attributes with one conditional table per attribute.
/// Parents are kept in ascending order; table rows are indexed mixed-radix
/// over the parents' categories, first parent most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesNet {
    pub schema: AttributeSchema,
    pub parents: Vec<Vec<usize>>,
    pub cpts: Vec<Vec<Vec<f64>>>,
    /// Maximum-likelihood log-likelihood of the training data.
    pub log_likelihood: f64,
    pub bic: f64,
}

/// Weighted data: unique records with their counts.
struct Data {
    rows: Vec<(Record, u64)>,
    n: f64,
    cards: Vec<usize>,
}

impl Data {
    fn new(sample: &[Record], schema: &AttributeSchema) -> Result<Self> {
        let index = CombinationIndex::build(sample, schema)?;
        Ok(Self {
            rows: index.unique_records(),
            n: sample.len() as f64,
            cards: schema.cardinalities(),
        })
    }

    fn config_count(&self, parents: &[usize]) -> usize {
        parents.iter().map(|&p| self.cards[p]).product()
    }

    /// `counts[config][value]` for `child` given `parents`.
    fn counts(&self, child: usize, parents: &[usize]) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.cards[child]]; self.config_count(parents)];
        for (rec, c) in &self.rows {
            out[config_index(rec, parents, &self.cards)][rec.get(child)] += c;
        }
        out
    }

    /// `(log-likelihood, BIC)` contribution of one family.
    fn family_score(&self, child: usize, parents: &[usize]) -> (f64, f64) {
        let mut ll = 0.0;
        for row in self.counts(child, parents) {
            let total: u64 = row.iter().sum();
            for &c in &row {
                if c > 0 {
                    ll += c as f64 * (c as f64 / total as f64).ln();
                }
            }
        }
        let free = self.config_count(parents) * (self.cards[child] - 1);
        (ll, ll - 0.5 * self.n.ln() * free as f64)
    }
}

fn config_index(rec: &Record, parents: &[usize], cards: &[usize]) -> usize {
    parents
        .iter()
        .fold(0, |acc, &p| acc * cards[p] + rec.get(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

struct Search<'a> {
    data: &'a Data,
    cache: HashMap<(usize, Vec<usize>), (f64, f64)>,
}

impl Search<'_> {
    fn score(&mut self, child: usize, parents: &[usize]) -> f64 {
        let data = self.data;
        self.cache
            .entry((child, parents.to_vec()))
            .or_insert_with(|| data.family_score(child, parents))
            .1
    }
}

fn with(parents: &[usize], p: usize) -> Vec<usize> {
    let mut v = parents.to_vec();
    v.push(p);
    v.sort_unstable();
    v
}

fn without(parents: &[usize], p: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&q| q != p).collect()
}

fn is_acyclic(parents: &[Vec<usize>]) -> bool {
    topological_order(parents).is_ok()
}

/// Greedy hill climbing over single-edge additions, deletions and
/// reversals, maximizing BIC. Each iteration applies the best strictly
/// improving move; equal gains go to the smallest move in
/// (add < delete < reverse, then parent, then child) order.
pub fn bn_learn(
    sample: &[Record],
    schema: &AttributeSchema,
    config: &BnConfig,
) -> Result<BayesNet> {
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 records".into()));
    }
    if !(config.alpha > 0.0) {
        return Err(Error::InvalidArgument(
            "Laplace alpha must be positive".into(),
        ));
    }
    let data = Data::new(sample, schema)?;
    let k = schema.len();
    let mut search = Search {
        data: &data,
        cache: HashMap::new(),
    };
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); k];

    for _ in 0..config.max_iters {
        let mut best: Option<(f64, Move)> = None;
        let mut consider = |gain: f64, mv: Move| {
            if gain > 1e-9 && best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, mv));
            }
        };
        for u in 0..k {
            for v in 0..k {
                if u == v {
                    continue;
                }
                let has = parents[v].contains(&u);
                if !has && !parents[u].contains(&v) && parents[v].len() < config.max_parents {
                    let mut trial = parents.clone();
                    trial[v] = with(&parents[v], u);
                    if is_acyclic(&trial) {
                        let gain = search.score(v, &trial[v]) - search.score(v, &parents[v]);
                        consider(gain, Move::Add(u, v));
                    }
                }
            }
        }
        for u in 0..k {
            for v in 0..k {
                if parents[v].contains(&u) {
                    let reduced = without(&parents[v], u);
                    let gain = search.score(v, &reduced) - search.score(v, &parents[v]);
                    consider(gain, Move::Delete(u, v));
                }
            }
        }
        for u in 0..k {
            for v in 0..k {
                if parents[v].contains(&u) && parents[u].len() < config.max_parents {
                    let mut trial = parents.clone();
                    trial[v] = without(&parents[v], u);
                    trial[u] = with(&parents[u], v);
                    if is_acyclic(&trial) {
                        let gain = search.score(v, &trial[v]) + search.score(u, &trial[u])
                            - search.score(v, &parents[v])
                            - search.score(u, &parents[u]);
                        consider(gain, Move::Reverse(u, v));
                    }
                }
            }
        }
        let Some((_, mv)) = best else { break };
        match mv {
            Move::Add(u, v) => parents[v] = with(&parents[v], u),
            Move::Delete(u, v) => parents[v] = without(&parents[v], u),
            Move::Reverse(u, v) => {
                parents[v] = without(&parents[v], u);
                parents[u] = with(&parents[u], v);
            }
        }
    }
    fit(&data, schema, parents, config.alpha)
}

fn fit(
    data: &Data,
    schema: &AttributeSchema,
    parents: Vec<Vec<usize>>,
    alpha: f64,
) -> Result<BayesNet> {
    let mut cpts = Vec::with_capacity(parents.len());
    let (mut ll, mut bic) = (0.0, 0.0);
    for (child, ps) in parents.iter().enumerate() {
        let r = data.cards[child] as f64;
        let table = data
            .counts(child, ps)
            .into_iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| (c as f64 + alpha) / (total as f64 + alpha * r))
                    .collect()
            })
            .collect();
        cpts.push(table);
        let (l, b) = data.family_score(child, ps);
        ll += l;
        bic += b;
    }
    let net = BayesNet {
        schema: schema.clone(),
        parents,
        cpts,
        log_likelihood: ll,
        bic,
    };
    net.as_population_spec(1, 0).validate()?;
    Ok(net)
}

/// BIC of a fixed structure on `sample`.
pub fn bic_score(
    sample: &[Record],
    schema: &AttributeSchema,
    parents: &[Vec<usize>],
) -> Result<f64> {
    let data = Data::new(sample, schema)?;
    if parents.len() != schema.len() || !is_acyclic(parents) {
        return Err(Error::InvalidArgument(
            "structure must be a DAG over the schema".into(),
        ));
    }
    Ok(parents
        .iter()
        .enumerate()
        .map(|(child, ps)| {
            let mut sorted = ps.clone();
            sorted.sort_unstable();
            data.family_score(child, &sorted).1
        })
        .sum())
}

impl BayesNet {
    /// `(parent, child)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        e.sort_unstable();
        e
    }

    fn as_population_spec(&self, size: usize, seed: u64) -> PopulationSpec {
        PopulationSpec {
            schema: self.schema.clone(),
            parents: self.parents.clone(),
            cpts: self.cpts.clone(),
            forbidden: Vec::new(),
            size,
            seed,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&BayesNetFile::from(self))?,
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: BayesNetFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.try_into()
    }
}

/// Ancestral sampling in topological order.
pub fn bn_sample(net: &BayesNet, n: usize, seed: u64) -> Result<Vec<Record>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    synth_population(&net.as_population_spec(n, seed))
}

#[derive(Serialize, Deserialize)]
struct BayesNetFile {
    schema: AttributeSchema,
    edges: Vec<(String, String)>,
    cpts: Vec<Vec<Vec<f64>>>,
    log_likelihood: f64,
    bic: f64,
}

impl From<&BayesNet> for BayesNetFile {
    fn from(net: &BayesNet) -> Self {
        let name = |k: usize| net.schema.attribute(k).name.clone();
        Self {
            schema: net.schema.clone(),
            edges: net
                .edges()
                .into_iter()
                .map(|(p, c)| (name(p), name(c)))
                .collect(),
            cpts: net.cpts.clone(),
            log_likelihood: net.log_likelihood,
            bic: net.bic,
        }
    }
}

impl TryFrom<BayesNetFile> for BayesNet {
    type Error = Error;

    fn try_from(file: BayesNetFile) -> Result<Self> {
        let mut parents = vec![Vec::new(); file.schema.len()];
        for (p, c) in &file.edges {
            let idx = |name: &str| {
                file.schema
                    .attribute_index(name)
                    .ok_or_else(|| Error::PopulationSpec(format!("unknown attribute {name:?}")))
            };
            parents[idx(c)?].push(idx(p)?);
        }
        for ps in &mut parents {
            ps.sort_unstable();
        }
        let net = BayesNet {
            schema: file.schema,
            parents,
            cpts: file.cpts,
            log_likelihood: file.log_likelihood,
            bic: file.bic,
        };
        net.as_population_spec(1, 0).validate()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_index;

    #[test]
    fn resampling_stays_inside_the_sample() {
        let sample: Vec<Record> = (0..20u16)
            .map(|i| Record::new(vec![i % 3, i % 2]))
            .collect();
        let schema = AttributeSchema::from_cardinalities(&[3, 2]).unwrap();
        let out = reweight_generate(&sample, 500, 4).unwrap();
        let idx = build_index(&sample, &schema).unwrap();
        assert!(out.iter().all(|r| idx.contains(r)));
        assert_eq!(out, reweight_generate(&sample, 500, 4).unwrap());
        assert!(reweight_generate(&[], 5, 0).is_err());
    }

    #[test]
    fn single_attribute_frequencies() {
        let schema = AttributeSchema::from_cardinalities(&[2]).unwrap();
        let net = BayesNet {
            schema,
            parents: vec![vec![]],
            cpts: vec![vec![vec![0.3, 0.7]]],
            log_likelihood: 0.0,
            bic: 0.0,
        };
        let draws = bn_sample(&net, 100_000, 5).unwrap();
        let ones = draws.iter().filter(|r| r.get(0) == 1).count() as f64 / 1e5;
        assert!((ones - 0.7).abs() < 0.01);
    }

    #[test]
    fn deterministic_tables_force_the_assignment() {
        let schema = AttributeSchema::from_cardinalities(&[2, 3]).unwrap();
        let net = BayesNet {
            schema,
            parents: vec![vec![], vec![0]],
            cpts: vec![
                vec![vec![0.0, 1.0]],
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            ],
            log_likelihood: 0.0,
            bic: 0.0,
        };
        assert!(bn_sample(&net, 50, 1)
            .unwrap()
            .iter()
            .all(|r| r.values == vec![1, 2]));
    }

    #[test]
    fn laplace_rows_are_positive() {
        let schema = AttributeSchema::from_cardinalities(&[2, 3]).unwrap();
        let sample: Vec<Record> = (0..50u16)
            .map(|i| Record::new(vec![i % 2, (i % 2) * 2]))
            .collect();
        let net = bn_learn(&sample, &schema, &BnConfig::default()).unwrap();
        for table in &net.cpts {
            for row in table {
                assert!(row.iter().all(|&p| p > 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(net.edges().len(), 1);
        assert!((net.bic - bic_score(&sample, &schema, &net.parents).unwrap()).abs() < 1e-9);
    }
}
