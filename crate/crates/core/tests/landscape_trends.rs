//! Finite-N trends of the bottom of the landscape, p = 3, L = 3.

use pspin_core::critical_points::SearchConfig;
use pspin_core::perturbation::{run_extremal, ExtremalRun};
use pspin_core::{solve_constants, ModelParams};

fn runs(samples: usize) -> Vec<ExtremalRun> {
    [12u32, 20, 32]
        .iter()
        .map(|&n| {
            let params = ModelParams::new(3, n).unwrap();
            let k = solve_constants(params).unwrap();
            run_extremal(params, samples, 3.0, 500 + n as u64, &SearchConfig::default(), &k).unwrap()
        })
        .collect()
}

#[test]
fn bottom_points_separate_and_become_minima() {
    let runs = runs(60);
    let overlaps: Vec<f64> = runs.iter().map(|r| r.median_max_overlap).collect();
    let minima: Vec<f64> = runs.iter().map(|r| r.minima_fraction).collect();
    for r in &runs {
        assert!(r.max_overlaps.iter().flatten().all(|q| (-1.0..=1.0).contains(q)));
    }
    assert!(overlaps.windows(2).all(|w| w[1] < w[0]), "median max overlap over N = 12, 20, 32: {overlaps:?}");
    assert!(minima.windows(2).all(|w| w[1] > w[0]), "fraction of minima over N = 12, 20, 32: {minima:?}");
}
