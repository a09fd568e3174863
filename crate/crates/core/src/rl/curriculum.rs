//! Adaptive difficulty schedules driven by measured performance.
//!
//! Each stage is a pure threshold function of the latest measurement, so the
//! schedule can move down as well as up. Thresholds are strict comparisons.

use std::collections::BTreeMap;

/// Price-market stage from measured market survival.
/// Stages: all slots stabilizing; 60/40 over {5,4}; 40/30/30 over {5,4,3};
/// uniform over {5,4,3,2,1}.
pub fn crash_stage(survival: f64) -> usize {
    if survival > 0.85 {
        3
    } else if survival > 0.75 {
        2
    } else if survival > 0.6 {
        1
    } else {
        0
    }
}

/// Mixture over stabilizing-slot counts (out of five firms) for a measured
/// survival rate.
pub fn crash_mixture(survival: f64) -> BTreeMap<usize, f64> {
    match crash_stage(survival) {
        0 => BTreeMap::from([(5, 1.0)]),
        1 => BTreeMap::from([(5, 0.6), (4, 0.4)]),
        2 => BTreeMap::from([(5, 0.4), (4, 0.3), (3, 0.3)]),
        _ => BTreeMap::from([(5, 0.2), (4, 0.2), (3, 0.2), (2, 0.2), (1, 0.2)]),
    }
}

/// Listing-market stage from measured detection rate.
pub fn lemon_stage(detection: f64) -> usize {
    if detection > 0.85 {
        3
    } else if detection > 0.7 {
        2
    } else if detection > 0.5 {
        1
    } else {
        0
    }
}

/// Mixture over deceptive-cluster sizes for a measured detection rate.
/// Mixtures over the listed size sets are uniform.
pub fn lemon_mixture(detection: f64) -> BTreeMap<usize, f64> {
    match lemon_stage(detection) {
        0 => BTreeMap::from([(3, 1.0)]),
        1 => BTreeMap::from([(3, 0.5), (6, 0.5)]),
        _ => BTreeMap::from([(3, 1.0 / 3.0), (6, 1.0 / 3.0), (9, 1.0 / 3.0)]),
    }
}

/// Current stage and mixture; transitions happen only at iteration
/// boundaries when the trainer feeds in a fresh measurement.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    pub stage: usize,
    pub measured: f64,
    pub mixture: BTreeMap<usize, f64>,
}

impl CurriculumState {
    pub fn new_crash() -> Self {
        Self {
            stage: 0,
            measured: 0.0,
            mixture: crash_mixture(0.0),
        }
    }

    pub fn new_lemon() -> Self {
        Self {
            stage: 0,
            measured: 0.0,
            mixture: lemon_mixture(0.0),
        }
    }

    pub fn update_crash(&mut self, survival: f64) {
        self.measured = survival;
        self.stage = crash_stage(survival);
        self.mixture = crash_mixture(survival);
    }

    pub fn update_lemon(&mut self, detection: f64) {
        self.measured = detection;
        self.stage = lemon_stage(detection);
        self.mixture = lemon_mixture(detection);
    }
}

/// Draw a difficulty cell from a mixture. Keys iterate in sorted order, so
/// the draw is deterministic for a given stream state.
pub fn sample_mixture(mixture: &BTreeMap<usize, f64>, rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    let u: f64 = rand::Rng::gen(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (&k, &p) in mixture {
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}
