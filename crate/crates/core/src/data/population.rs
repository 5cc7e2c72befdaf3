//! Synthetic ground-truth populations and sampling from them.
//!
//! A [`PopulationSpec`] is a Bayesian network over the schema plus a list of
//! forbidden combinations. Records are drawn ancestrally and rejected when
//! they match a forbidden rule, so every structural zero is known exactly.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::index::CombinationIndex;
use super::schema::{Attribute, AttributeSchema, Record};
use crate::diffcore::rng_from_seed;
use crate::error::{Error, Result};

/// Draws allowed per requested record before giving up.
pub const MAX_ATTEMPTS_PER_RECORD: usize = 100;

/// A conjunction of `attribute = category` literals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForbiddenRule {
    pub literals: Vec<(usize, u16)>,
}

impl ForbiddenRule {
    pub fn matches(&self, record: &Record) -> bool {
        self.literals.iter().all(|&(k, c)| record.values[k] == c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSpec {
    pub schema: AttributeSchema,
    /// Parents of each attribute, ascending.
    pub parents: Vec<Vec<usize>>,
    /// Per attribute, one probability row per parent configuration
    /// (mixed-radix over `parents`, first parent most significant).
    pub cpts: Vec<Vec<Vec<f64>>>,
    pub forbidden: Vec<ForbiddenRule>,
    pub size: usize,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.schema.len();
        if self.parents.len() != k || self.cpts.len() != k {
            return Err(Error::PopulationSpec(
                "parents and cpts need one entry per attribute".into(),
            ));
        }
        topological_order(&self.parents)?;
        for (child, parents) in self.parents.iter().enumerate() {
            if parents.iter().any(|&p| p >= k || p == child) {
                return Err(Error::PopulationSpec(format!(
                    "attribute {child} has an invalid parent"
                )));
            }
            let configs: usize = parents
                .iter()
                .map(|&p| self.schema.attribute(p).cardinality())
                .product();
            let table = &self.cpts[child];
            if table.len() != configs {
                return Err(Error::PopulationSpec(format!(
                    "cpt of {:?} has {} rows, expected {configs}",
                    self.schema.attribute(child).name,
                    table.len()
                )));
            }
            for row in table {
                if row.len() != self.schema.attribute(child).cardinality() {
                    return Err(Error::PopulationSpec(format!(
                        "cpt row width mismatch for {:?}",
                        self.schema.attribute(child).name
                    )));
                }
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p))
                    || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return Err(Error::PopulationSpec(format!(
                        "cpt row of {:?} is not a probability vector",
                        self.schema.attribute(child).name
                    )));
                }
            }
        }
        for rule in &self.forbidden {
            if rule.literals.is_empty() {
                return Err(Error::PopulationSpec("empty forbidden rule".into()));
            }
            for &(a, c) in &rule.literals {
                if a >= k || c as usize >= self.schema.attribute(a).cardinality() {
                    return Err(Error::PopulationSpec(format!(
                        "forbidden rule references invalid attribute/category ({a}, {c})"
                    )));
                }
            }
        }
        if self.size == 0 {
            return Err(Error::PopulationSpec("size must be positive".into()));
        }
        Ok(())
    }

    pub fn is_forbidden(&self, record: &Record) -> bool {
        self.forbidden.iter().any(|r| r.matches(record))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn config_index(&self, child: usize, record: &[u16]) -> usize {
        self.parents[child].iter().fold(0, |acc, &p| {
            acc * self.schema.attribute(p).cardinality() + record[p] as usize
        })
    }
}

/// Kahn's algorithm, lowest index first among ready nodes.
pub fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            if p >= n {
                return Err(Error::PopulationSpec(format!("parent {p} out of range")));
            }
            children[p].push(c);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::PopulationSpec("dependency graph has a cycle".into()));
    }
    Ok(order)
}

pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> u16 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c as u16;
        }
    }
    // Rounding left u above the cumulative sum: take the last category with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u16
}

/// Ancestral sampling with rejection of forbidden combinations.
pub fn synth_population(spec: &PopulationSpec) -> Result<Vec<Record>> {
    spec.validate()?;
    let order = topological_order(&spec.parents)?;
    let mut rng = rng_from_seed(spec.seed);
    let cap = spec.size.saturating_mul(MAX_ATTEMPTS_PER_RECORD);
    let mut out = Vec::with_capacity(spec.size);
    let mut values = vec![0u16; spec.schema.len()];
    let mut attempts = 0;
    while out.len() < spec.size {
        if attempts >= cap {
            return Err(Error::Unsatisfiable {
                accepted: out.len(),
                attempts,
            });
        }
        attempts += 1;
        for &k in &order {
            let row = &spec.cpts[k][spec.config_index(k, &values)];
            values[k] = sample_categorical(row, &mut rng);
        }
        let record = Record::new(values.clone());
        if !spec.is_forbidden(&record) {
            out.push(record);
        }
    }
    Ok(out)
}

/// Seeded permutation of `0..n`; samples at any rate are prefixes of it.
fn sample_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    idx
}

fn sample_size(rate: f64, n: usize) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate {rate} outside (0, 1]"
        )));
    }
    Ok(((rate * n as f64).round() as usize).min(n))
}

/// Simple random sample without replacement of size `round(rate·N)`.
///
/// For a fixed seed, samples drawn at increasing rates are nested.
pub fn draw_sample(population: &[Record], rate: f64, seed: u64) -> Result<Vec<Record>> {
    if population.is_empty() {
        return Err(Error::InvalidArgument("population is empty".into()));
    }
    let m = sample_size(rate, population.len())?;
    let perm = sample_permutation(population.len(), seed);
    Ok(perm[..m].iter().map(|&i| population[i].clone()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub rate: f64,
    pub sample_size: usize,
    /// Unique sample combinations over unique population combinations.
    pub combination_coverage: f64,
    /// Population instances whose combination appears in the sample, over N.
    pub instance_coverage: f64,
}

/// Coverage of population combinations by nested samples.
pub fn coverage_curve(
    population: &[Record],
    schema: &AttributeSchema,
    rates: &[f64],
    seed: u64,
) -> Result<Vec<CoveragePoint>> {
    if population.is_empty() {
        return Err(Error::InvalidArgument("population is empty".into()));
    }
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("rates must be ascending".into()));
    }
    let pop = CombinationIndex::build(population, schema)?;
    let perm = sample_permutation(population.len(), seed);
    let mut seen: HashSet<u128> = HashSet::new();
    let mut covered_instances: u64 = 0;
    let mut taken = 0;
    let mut out = Vec::with_capacity(rates.len());
    for &rate in rates {
        let m = sample_size(rate, population.len())?;
        for &i in &perm[taken..m] {
            let key = pop.key(&population[i]);
            if seen.insert(key) {
                covered_instances += pop.count(key);
            }
        }
        taken = m;
        out.push(CoveragePoint {
            rate,
            sample_size: m,
            combination_coverage: seen.len() as f64 / pop.unique_count() as f64,
            instance_coverage: covered_instances as f64 / pop.total() as f64,
        });
    }
    Ok(out)
}

// --- file format ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CptRowFile {
    given: Vec<String>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CptFile {
    attribute: String,
    rows: Vec<CptRowFile>,
}

#[derive(Serialize, Deserialize)]
struct PopulationSpecFile {
    attributes: Vec<Attribute>,
    edges: Vec<(String, String)>,
    cpts: Vec<CptFile>,
    forbidden: Vec<BTreeMap<String, String>>,
    size: usize,
    seed: u64,
}

impl Serialize for PopulationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let schema = &self.schema;
        let name = |k: usize| schema.attribute(k).name.clone();
        let label = |k: usize, c: usize| schema.attribute(k).categories[c].clone();
        let edges = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (name(p), name(c))))
            .collect();
        let cpts = self
            .cpts
            .iter()
            .enumerate()
            .map(|(k, table)| {
                let cards: Vec<usize> = self.parents[k]
                    .iter()
                    .map(|&p| schema.attribute(p).cardinality())
                    .collect();
                let rows = table
                    .iter()
                    .enumerate()
                    .map(|(cfg, probs)| {
                        let mut rem = cfg;
                        let mut given = vec![String::new(); cards.len()];
                        for (j, &card) in cards.iter().enumerate().rev() {
                            given[j] = label(self.parents[k][j], rem % card);
                            rem /= card;
                        }
                        CptRowFile {
                            given,
                            probs: probs.clone(),
                        }
                    })
                    .collect();
                CptFile {
                    attribute: name(k),
                    rows,
                }
            })
            .collect();
        let forbidden = self
            .forbidden
            .iter()
            .map(|r| {
                r.literals
                    .iter()
                    .map(|&(a, c)| (name(a), label(a, c as usize)))
                    .collect()
            })
            .collect();
        PopulationSpecFile {
            attributes: schema.attributes().to_vec(),
            edges,
            cpts,
            forbidden,
            size: self.size,
            seed: self.seed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PopulationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = PopulationSpecFile::deserialize(d)?;
        spec_from_file(file).map_err(serde::de::Error::custom)
    }
}

fn spec_from_file(file: PopulationSpecFile) -> Result<PopulationSpec> {
    let schema = AttributeSchema::new(file.attributes)?;
    let attr = |name: &str| {
        schema
            .attribute_index(name)
            .ok_or_else(|| Error::PopulationSpec(format!("unknown attribute {name:?}")))
    };
    let cat = |k: usize, label: &str| {
        schema
            .attribute(k)
            .category_index(label)
            .map(|c| c as u16)
            .ok_or_else(|| {
                Error::PopulationSpec(format!(
                    "unknown category {label:?} for attribute {:?}",
                    schema.attribute(k).name
                ))
            })
    };
    let mut parents = vec![Vec::new(); schema.len()];
    for (p, c) in &file.edges {
        let (p, c) = (attr(p)?, attr(c)?);
        if !parents[c].contains(&p) {
            parents[c].push(p);
        }
    }
    for ps in &mut parents {
        ps.sort_unstable();
    }
    let mut cpts: Vec<Option<Vec<Vec<f64>>>> = vec![None; schema.len()];
    for cpt in file.cpts {
        let k = attr(&cpt.attribute)?;
        let cards: Vec<usize> = parents[k]
            .iter()
            .map(|&p| schema.attribute(p).cardinality())
            .collect();
        let configs: usize = cards.iter().product();
        let mut table: Vec<Option<Vec<f64>>> = vec![None; configs];
        for row in cpt.rows {
            if row.given.len() != parents[k].len() {
                return Err(Error::PopulationSpec(format!(
                    "cpt row of {:?} conditions on {} values, attribute has {} parents",
                    cpt.attribute,
                    row.given.len(),
                    parents[k].len()
                )));
            }
            let mut cfg = 0;
            for (j, label) in row.given.iter().enumerate() {
                cfg = cfg * cards[j] + cat(parents[k][j], label)? as usize;
            }
            table[cfg] = Some(row.probs);
        }
        let table = table
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                Error::PopulationSpec(format!("cpt of {:?} is incomplete", cpt.attribute))
            })?;
        cpts[k] = Some(table);
    }
    let cpts = cpts
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            t.ok_or_else(|| {
                Error::PopulationSpec(format!("missing cpt for {:?}", schema.attribute(k).name))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let forbidden = file
        .forbidden
        .iter()
        .map(|rule| {
            let literals = rule
                .iter()
                .map(|(a, c)| {
                    let k = attr(a)?;
                    Ok((k, cat(k, c)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ForbiddenRule { literals })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = PopulationSpec {
        schema,
        parents,
        cpts,
        forbidden,
        size: file.size,
        seed: file.seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_spec(cards: &[usize], size: usize, seed: u64) -> PopulationSpec {
        let schema = AttributeSchema::from_cardinalities(cards).unwrap();
        PopulationSpec {
            parents: vec![vec![]; cards.len()],
            cpts: cards
                .iter()
                .map(|&c| vec![vec![1.0 / c as f64; c]])
                .collect(),
            forbidden: vec![],
            schema,
            size,
            seed,
        }
    }

    #[test]
    fn uniform_marginals() {
        let spec = uniform_spec(&[2, 4], 100_000, 3);
        let pop = synth_population(&spec).unwrap();
        assert_eq!(pop.len(), 100_000);
        for (k, &card) in [2usize, 4].iter().enumerate() {
            for c in 0..card {
                let f = pop.iter().filter(|r| r.get(k) == c).count() as f64 / pop.len() as f64;
                assert!(
                    (f - 1.0 / card as f64).abs() < 0.01,
                    "attr {k} cat {c}: {f}"
                );
            }
        }
    }

    #[test]
    fn forbidden_combinations_never_appear() {
        let mut spec = uniform_spec(&[2, 2, 3], 20_000, 5);
        spec.forbidden.push(ForbiddenRule {
            literals: vec![(0, 0), (1, 1)],
        });
        let pop = synth_population(&spec).unwrap();
        assert!(pop.iter().all(|r| !(r.get(0) == 0 && r.get(1) == 1)));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = uniform_spec(&[3, 3], 500, 9);
        assert_eq!(
            synth_population(&spec).unwrap(),
            synth_population(&spec).unwrap()
        );
    }

    #[test]
    fn unsatisfiable_constraints_hit_the_attempt_cap() {
        let mut spec = uniform_spec(&[2], 10, 1);
        spec.forbidden.push(ForbiddenRule {
            literals: vec![(0, 0)],
        });
        spec.forbidden.push(ForbiddenRule {
            literals: vec![(0, 1)],
        });
        assert!(matches!(
            synth_population(&spec),
            Err(Error::Unsatisfiable { accepted: 0, .. })
        ));
    }

    #[test]
    fn cyclic_graph_is_rejected() {
        let mut spec = uniform_spec(&[2, 2], 10, 1);
        spec.parents = vec![vec![1], vec![0]];
        spec.cpts = vec![vec![vec![0.5, 0.5]; 2], vec![vec![0.5, 0.5]; 2]];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cpt_rows_must_be_stochastic() {
        let mut spec = uniform_spec(&[2], 10, 1);
        spec.cpts[0][0] = vec![0.5, 0.6];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sample_sizes_and_subset() {
        let spec = uniform_spec(&[3, 3, 3], 100_000, 2);
        let pop = synth_population(&spec).unwrap();
        let s = draw_sample(&pop, 0.05, 4).unwrap();
        assert_eq!(s.len(), 5_000);
        let full = draw_sample(&pop, 1.0, 4).unwrap();
        let mut a = full.clone();
        let mut b = pop.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(draw_sample(&pop, 0.0, 4).is_err());
        assert!(draw_sample(&pop, 1.5, 4).is_err());
        assert!(draw_sample(&[], 0.5, 4).is_err());
        // Nested: a smaller rate is a prefix of a larger one.
        let small = draw_sample(&pop, 0.01, 4).unwrap();
        assert_eq!(&s[..small.len()], &small[..]);
    }

    #[test]
    fn coverage_reaches_one_at_full_rate() {
        let spec = uniform_spec(&[4, 4, 4, 4], 3_000, 2);
        let pop = synth_population(&spec).unwrap();
        let curve = coverage_curve(&pop, &spec.schema, &[0.01, 0.1, 0.5, 1.0], 8).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].combination_coverage >= w[0].combination_coverage);
            assert!(w[1].instance_coverage >= w[0].instance_coverage);
        }
        let last = curve.last().unwrap();
        assert_eq!(last.combination_coverage, 1.0);
        assert_eq!(last.instance_coverage, 1.0);
    }

    #[test]
    fn file_round_trip() {
        let mut spec = uniform_spec(&[2, 3], 50, 1);
        spec.parents[1] = vec![0];
        spec.cpts[1] = vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]];
        spec.forbidden.push(ForbiddenRule {
            literals: vec![(0, 1), (1, 2)],
        });
        let text = serde_json::to_string(&spec).unwrap();
        let back: PopulationSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
