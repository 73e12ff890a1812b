//! Benchmark fixtures shared by the criterion targets.

use deepair::grid::{extract_patch, preprocess, Calendar, NormStats, Patch, Preprocessed};
use deepair::synthcity::{generate, SynthCity, SynthConfig};

pub fn city(rows: usize, hours: usize) -> (SynthConfig, SynthCity) {
    let cfg = SynthConfig {
        rows,
        cols: rows,
        hours,
        ..SynthConfig::default()
    };
    let city = generate(&cfg).expect("valid synth config");
    (cfg, city)
}

pub fn preprocessed(cfg: &SynthConfig, city: &SynthCity) -> Preprocessed {
    preprocess(
        &city.observations,
        &city.truth.spec,
        &cfg.schema().expect("schema"),
        &city.registry,
        city.start,
        cfg.hours,
        &Calendar::default(),
    )
    .expect("preprocess")
}

/// `count` normalized patches centred along the diagonal of the estimation cube.
pub fn patches(pre: &Preprocessed, n: usize, window: usize, count: usize) -> Vec<Patch> {
    let cube = &pre.estimation;
    let hours: Vec<usize> = (0..cube.hours).collect();
    let norm = NormStats::fit(cube, &hours).expect("norm");
    let z = norm.apply(cube).expect("normalize");
    (0..count)
        .map(|k| {
            let rc = k % cube.rows();
            extract_patch(&z, (rc, rc), n, window - 1 + k % (cube.hours - window + 1), window).expect("patch")
        })
        .collect()
}
