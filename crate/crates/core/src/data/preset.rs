//! Built-in desk-scale ground truth: a small travel-survey-like population
//! with strong attribute dependencies and a handful of infeasible
//! combinations.

use super::population::{ForbiddenRule, PopulationSpec};
use super::schema::{Attribute, AttributeSchema};

pub const DESK_POPULATION_SIZE: usize = 100_000;
pub const DESK_SAMPLE_RATE: f64 = 0.05;

const AGE: usize = 0;
const INCOME: usize = 1;
const LICENSE: usize = 2;
const CAR: usize = 3;
const WORK: usize = 4;
const MODE: usize = 5;
const DEPARTURE: usize = 6;
const HOUSEHOLD: usize = 7;

pub fn desk_schema() -> AttributeSchema {
    AttributeSchema::new(vec![
        Attribute::new("age", &["child", "young", "middle", "senior"]),
        Attribute::new("income", &["low", "medium", "high"]),
        Attribute::new("license", &["yes", "no"]),
        Attribute::new("car_owner", &["yes", "no"]),
        Attribute::new(
            "work",
            &["student", "office", "service", "manual", "not_working"],
        ),
        Attribute::new(
            "mode",
            &["car", "transit", "walk", "bicycle", "taxi", "none"],
        ),
        Attribute::new("departure", &["peak", "off_peak", "none"]),
        Attribute::new("household", &["one", "two", "three", "four_plus"]),
    ])
    .expect("desk schema is valid")
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// The desk preset with the given population size and seed.
pub fn desk_spec(size: usize, seed: u64) -> PopulationSpec {
    let schema = desk_schema();
    let mut parents = vec![Vec::new(); schema.len()];
    parents[INCOME] = vec![AGE];
    parents[LICENSE] = vec![AGE];
    parents[CAR] = vec![INCOME, HOUSEHOLD];
    parents[WORK] = vec![AGE];
    parents[MODE] = vec![LICENSE, CAR, WORK];
    parents[DEPARTURE] = vec![WORK, MODE];
    parents[HOUSEHOLD] = vec![AGE];

    let mut cpts = vec![Vec::new(); schema.len()];
    cpts[AGE] = vec![vec![0.18, 0.25, 0.35, 0.22]];
    cpts[INCOME] = vec![
        vec![0.25, 0.5, 0.25],
        vec![0.35, 0.45, 0.2],
        vec![0.2, 0.5, 0.3],
        vec![0.5, 0.4, 0.1],
    ];
    cpts[LICENSE] = vec![
        vec![0.0, 1.0],
        vec![0.6, 0.4],
        vec![0.85, 0.15],
        vec![0.55, 0.45],
    ];
    cpts[WORK] = vec![
        vec![0.9, 0.0, 0.0, 0.0, 0.1],
        vec![0.35, 0.25, 0.2, 0.1, 0.1],
        vec![0.01, 0.35, 0.25, 0.2, 0.19],
        vec![0.0, 0.05, 0.1, 0.1, 0.75],
    ];
    cpts[HOUSEHOLD] = vec![
        vec![0.0, 0.1, 0.4, 0.5],
        vec![0.3, 0.3, 0.2, 0.2],
        vec![0.1, 0.25, 0.3, 0.35],
        vec![0.3, 0.5, 0.12, 0.08],
    ];

    let car_base = [0.45, 0.75, 0.92];
    let car_shift = [-0.15, 0.0, 0.03, 0.05];
    cpts[CAR] = car_base
        .iter()
        .flat_map(|&b| {
            car_shift.iter().map(move |&s| {
                let yes: f64 = b + s;
                vec![yes, 1.0 - yes]
            })
        })
        .collect();

    // mode | license, car_owner, work
    let mode_by_work = [
        [0.05, 0.45, 0.3, 0.1, 0.02, 0.08],
        [0.4, 0.4, 0.08, 0.05, 0.03, 0.04],
        [0.3, 0.35, 0.15, 0.08, 0.04, 0.08],
        [0.35, 0.25, 0.15, 0.1, 0.02, 0.13],
        [0.1, 0.1, 0.15, 0.03, 0.02, 0.6],
    ];
    let mut mode = Vec::new();
    for license in 0..2 {
        for car in 0..2 {
            for weights in &mode_by_work {
                let mut w = weights.to_vec();
                if license == 1 || car == 1 {
                    w[0] = 0.0;
                }
                mode.push(normalized(&w));
            }
        }
    }
    cpts[MODE] = mode;

    // departure | work, mode
    let departure_by_work = [
        [0.85, 0.15, 0.0],
        [0.8, 0.2, 0.0],
        [0.45, 0.55, 0.0],
        [0.7, 0.3, 0.0],
        [0.2, 0.8, 0.0],
    ];
    let mut departure = Vec::new();
    for row in &departure_by_work {
        for m in 0..6 {
            departure.push(if m == 5 {
                vec![0.0, 0.0, 1.0]
            } else {
                row.to_vec()
            });
        }
    }
    cpts[DEPARTURE] = departure;

    let rule = |literals: &[(usize, u16)]| ForbiddenRule {
        literals: literals.to_vec(),
    };
    let forbidden = vec![
        rule(&[(AGE, 0), (LICENSE, 0)]),
        rule(&[(AGE, 0), (WORK, 1)]),
        rule(&[(AGE, 0), (WORK, 2)]),
        rule(&[(AGE, 0), (WORK, 3)]),
        rule(&[(AGE, 3), (WORK, 0)]),
        rule(&[(LICENSE, 1), (MODE, 0)]),
        rule(&[(CAR, 1), (MODE, 0)]),
        rule(&[(MODE, 5), (DEPARTURE, 0)]),
        rule(&[(MODE, 5), (DEPARTURE, 1)]),
        rule(&[(AGE, 0), (MODE, 4)]),
        rule(&[(AGE, 0), (HOUSEHOLD, 0)]),
    ];

    PopulationSpec {
        schema,
        parents,
        cpts,
        forbidden,
        size,
        seed,
    }
}

/// Desk preset at its default size.
pub fn desk_preset(seed: u64) -> PopulationSpec {
    desk_spec(DESK_POPULATION_SIZE, seed)
}
