use deepair::grid::GridCube;
use deepair::numerics::Rng;
use deepair::synthcity::{
    diurnal_profile, generate, planted_interaction_dataset, planted_linear_dataset, shift_field, Boundary,
    PlantedConfig, SynthConfig, STREET_CANYON, TRAFFIC,
};

fn quiet() -> SynthConfig {
    SynthConfig {
        rows: 8,
        cols: 8,
        hours: 48,
        noise_std: 0.0,
        emission_rate: 0.0,
        background_rate: 0.0,
        initial_level: 0.0,
        ..SynthConfig::default()
    }
}

fn plane_sum(cube: &GridCube, t: usize, c: usize) -> f64 {
    cube.plane(t, c).iter().sum()
}

#[test]
fn null_dynamics_stay_zero() {
    let city = generate(&quiet()).unwrap();
    for t in 0..48 {
        assert!(city.truth.plane(t, 0).iter().all(|&v| v == 0.0), "hour {t}");
    }
}

#[test]
fn still_air_accumulates_the_traffic_integral() {
    let cfg = SynthConfig {
        emission_rate: 0.01,
        decay: 0.0,
        advection: 0.0,
        ..quiet()
    };
    let city = generate(&cfg).unwrap();
    let cube = &city.truth;
    let (tr, cy) = (cube.schema.require(TRAFFIC).unwrap(), cube.schema.require(STREET_CANYON).unwrap());
    for r in 0..8 {
        for c in 0..8 {
            let amp = 1.0 + cfg.canyon_amplification * cube.get(0, cy, r, c);
            let mut integral = 0.0;
            for t in 0..48 {
                let want = cfg.emission_rate * amp * integral;
                let got = cube.get(t, 0, r, c);
                assert!((got - want).abs() <= 1e-10 * want.max(1.0), "({r},{c}) hour {t}: {got} vs {want}");
                integral += cube.get(t, tr, r, c);
            }
        }
    }
}

#[test]
fn traffic_profile_peaks_morning_and_evening() {
    let p: Vec<f64> = (0..24).map(diurnal_profile).collect();
    let peaks: Vec<usize> = (1..23).filter(|&h| p[h] > p[h - 1] && p[h] > p[h + 1]).collect();
    assert_eq!(peaks, vec![8, 18]);
    assert!(p.iter().all(|&v| v >= 0.2));
}

#[test]
fn generation_is_a_pure_function_of_the_config() {
    let cfg = SynthConfig {
        hours: 60,
        ..SynthConfig::default()
    };
    let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let bits = |c: &GridCube| c.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.truth), bits(&b.truth));
    assert_eq!(a.observations, b.observations);
    let other = generate(&SynthConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(bits(&a.truth), bits(&other.truth));
}

#[test]
fn toroidal_shift_is_a_permutation() {
    let mut rng = Rng::new(4);
    let field: Vec<f64> = (0..35).map(|_| rng.uniform(0.0, 10.0)).collect();
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    for (dr, dc) in [(1, 0), (-2, 1), (0, -1), (3, 3)] {
        let out = shift_field(&field, 5, 7, dr, dc, Boundary::Toroidal, 0.0);
        assert_eq!(sorted(&out), sorted(&field));
        assert_eq!(out[(dr.rem_euclid(5) * 7 + dc.rem_euclid(7)) as usize], field[0]);
    }
}

#[test]
fn mass_decays_geometrically_on_a_torus() {
    for decay in [0.0, 0.2] {
        let cfg = SynthConfig {
            decay,
            initial_level: 20.0,
            boundary: Boundary::Toroidal,
            ..quiet()
        };
        let city = generate(&cfg).unwrap();
        for t in 1..48 {
            let (prev, now) = (plane_sum(&city.truth, t - 1, 0), plane_sum(&city.truth, t, 0));
            assert!((now - (1.0 - decay) * prev).abs() <= 1e-9 * prev, "decay {decay} hour {t}");
        }
    }
}

#[test]
fn canyons_raise_pollution_under_identical_traffic() {
    let base = SynthConfig {
        hours: 96,
        ..SynthConfig::default()
    };
    let flat = generate(&SynthConfig {
        canyon_amplification: 0.0,
        ..base.clone()
    })
    .unwrap();
    let amped = generate(&base).unwrap();
    let cube = &amped.truth;
    let cy = cube.schema.require(STREET_CANYON).unwrap();
    let tr = cube.schema.require(TRAFFIC).unwrap();
    assert_eq!(flat.truth.plane(5, tr), cube.plane(5, tr));
    let mean_over = |c: &GridCube, pick: &dyn Fn(f64) -> bool| {
        let (mut s, mut n) = (0.0, 0);
        for t in 0..96 {
            for (i, &v) in c.plane(t, 0).iter().enumerate() {
                if pick(cube.plane(0, cy)[i]) {
                    s += v;
                    n += 1;
                }
            }
        }
        s / n as f64
    };
    let canyon = |x: f64| x > 0.0;
    assert!(mean_over(cube, &canyon) > mean_over(&flat.truth, &canyon));
}

#[test]
fn stations_observe_the_truth() {
    let city = generate(&SynthConfig {
        hours: 24,
        ..SynthConfig::default()
    })
    .unwrap();
    let start = city.start;
    let mut seen = 0;
    for o in &city.observations {
        let e = city.registry.get(&o.source).unwrap();
        let c = city.truth.schema.require(&o.channel).unwrap();
        let t = (o.time - start).num_hours() as usize;
        assert_eq!(o.value, city.truth.get(t, c, e.row, e.col));
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn invalid_configs_name_the_field() {
    let err = generate(&SynthConfig {
        decay: 1.5,
        ..SynthConfig::default()
    })
    .unwrap_err();
    assert!(err.to_string().contains("decay"), "{err}");
    let err = generate(&SynthConfig {
        advection: 3.0,
        ..SynthConfig::default()
    })
    .unwrap_err();
    assert!(err.to_string().contains("advection"), "{err}");
    let err = generate(&SynthConfig {
        emission_rate: -1.0,
        ..SynthConfig::default()
    })
    .unwrap_err();
    assert!(err.to_string().contains("emission_rate"), "{err}");
}

/// Independent recomputation of a patch mean at the target hour.
fn scripted(cube: &GridCube, center: (usize, usize), n: usize, t: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = (n / 2) as isize;
    let mut acc = 0.0;
    for dr in -h..=h {
        for dc in -h..=h {
            let (r, c) = ((center.0 as isize + dr) as usize, (center.1 as isize + dc) as usize);
            let v: Vec<f64> = (0..cube.channels()).map(|k| cube.get(t, k, r, c)).collect();
            acc += f(&v);
        }
    }
    acc / (n * n) as f64
}

#[test]
fn planted_interaction_targets_match_recomputation() {
    let cfg = PlantedConfig {
        samples: 200,
        seed: 3,
        ..PlantedConfig::default()
    };
    let d = planted_interaction_dataset(&cfg).unwrap();
    for (s, &clean) in d.samples.iter().zip(&d.clean) {
        let want = scripted(&d.cube, s.center, cfg.patch_size, s.key.t, &|v| v[0] * v[1]);
        assert!((clean - want).abs() <= 1e-12, "{clean} vs {want}");
        assert_eq!(s.target[0], clean);
    }
    let m0: f64 = d.cube.values.iter().step_by(2).sum::<f64>() / (d.cube.values.len() / 2) as f64;
    assert!(m0.abs() < 0.05, "channel mean {m0}");
}

#[test]
fn planted_linear_targets_match_recomputation() {
    let coeffs = [3.0, -2.0, 0.0];
    let cfg = PlantedConfig {
        samples: 200,
        patch_size: 5,
        window: 2,
        seed: 9,
        ..PlantedConfig::default()
    };
    let d = planted_linear_dataset(&cfg, &coeffs).unwrap();
    for (s, &clean) in d.samples.iter().zip(&d.clean) {
        let want = scripted(&d.cube, s.center, 5, s.key.t, &|v| 3.0 * v[0] - 2.0 * v[1]);
        assert!((clean - want).abs() <= 1e-12, "{clean} vs {want}");
    }
}

#[test]
fn zero_coefficients_leave_pure_noise() {
    let cfg = PlantedConfig {
        samples: 4000,
        noise_std: 0.5,
        ..PlantedConfig::default()
    };
    let d = planted_linear_dataset(&cfg, &[0.0, 0.0]).unwrap();
    assert!(d.clean.iter().all(|&c| c == 0.0));
    let y: Vec<f64> = d.samples.iter().map(|s| s.target[0]).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!((sd - 0.5).abs() < 0.03 && mean.abs() < 0.03, "mean {mean} sd {sd}");
}
