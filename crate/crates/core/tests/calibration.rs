use labelshift::calibration::CalibrationObjective;
use labelshift::metrics::nll;
use labelshift::numerics::softmax;
use labelshift::{
    apply_calibration, fit_calibration, CalibrationFamily, CalibrationParams, FitOptions, LabeledLogitSet, Matrix,
    ProbMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn draw_label(rng: &mut ChaCha20Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Logits `scale · N(0, 1)` with labels drawn from `softmax(z / t + b)`.
fn sample_set(seed: u64, n: usize, m: usize, scale: f64, t: f64, b: &[f64]) -> LabeledLogitSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..m).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let g: Vec<f64> = z.iter().zip(b).map(|(zi, bi)| zi / t + bi).collect();
        labels.push(draw_label(&mut rng, softmax(&g).as_slice()));
        rows.push(z);
    }
    LabeledLogitSet::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
}

fn naive_nll(set: &LabeledLogitSet, t: f64, b: &[f64]) -> f64 {
    let mut total = 0.0;
    for (z, &y) in set.logits().iter_rows().zip(set.labels()) {
        let g: Vec<f64> = z.iter().zip(b).map(|(zi, bi)| zi / t + bi).collect();
        let mx = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + g.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - g[y];
    }
    total / set.len() as f64
}

#[test]
fn temperature_matches_grid_search() {
    let m = 4;
    let set = sample_set(11, 50_000, m, 3.0, 2.0, &vec![0.0; m]);
    let fit = fit_calibration(CalibrationFamily::Ts, &set, &FitOptions::default()).unwrap();
    let t_hat = fit.params.temperature.unwrap();
    assert!((1.9..=2.1).contains(&t_hat), "T = {t_hat}");

    // coarse pass over (0, 10] then the full 1e-3 grid near the minimum
    let zeros = vec![0.0; m];
    let coarse = (1..=100)
        .map(|i| i as f64 * 0.1)
        .min_by(|a, b| naive_nll(&set, *a, &zeros).total_cmp(&naive_nll(&set, *b, &zeros)))
        .unwrap();
    let lo = ((coarse - 0.2).max(1e-3) * 1000.0).round() as usize;
    let hi = ((coarse + 0.2) * 1000.0).round() as usize;
    let t_grid = (lo..=hi)
        .map(|i| i as f64 * 1e-3)
        .min_by(|a, b| naive_nll(&set, *a, &zeros).total_cmp(&naive_nll(&set, *b, &zeros)))
        .unwrap();
    assert!((t_hat - t_grid).abs() <= 2e-3, "fit {t_hat}, grid {t_grid}");
    assert!(fit.nll <= naive_nll(&set, t_grid, &zeros) + 1e-9);
}

#[test]
fn binary_bcts_matches_two_dimensional_grid() {
    for (seed, t, b) in [(3u64, 0.7, 0.8), (4, 1.6, -0.4), (5, 3.0, 0.0)] {
        let set = sample_set(seed, 3000, 2, 2.0, t, &[b, 0.0]);
        let fit = fit_calibration(CalibrationFamily::Bcts, &set, &FitOptions::default()).unwrap();

        // only (log T, b0 - b1) matters; zoom a 41×41 grid around the best cell
        let f = |lt: f64, d: f64| naive_nll(&set, lt.exp(), &[d, 0.0]);
        let (mut c_lt, mut c_d, mut half) = (0.0, 0.0, 4.0);
        let mut best = f(c_lt, c_d);
        while half > 1e-7 {
            let step = half / 20.0;
            for i in -20..=20 {
                for j in -20..=20 {
                    let (lt, d) = (c_lt + i as f64 * step, c_d + j as f64 * step);
                    let v = f(lt, d);
                    if v < best {
                        best = v;
                        (c_lt, c_d) = (lt, d);
                    }
                }
            }
            half = step * 2.0;
        }
        assert!(
            (fit.nll - best).abs() <= 1e-6,
            "seed {seed}: fit {} grid {best}",
            fit.nll
        );
    }
}

#[test]
fn constant_rows_give_log_m() {
    let m = 3;
    let rows = vec![vec![0.4, 0.4, 0.4]; 30];
    let labels = (0..30).map(|k| k % m).collect();
    let set = LabeledLogitSet::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
    let fit = fit_calibration(CalibrationFamily::Ts, &set, &FitOptions::default()).unwrap();
    assert!((fit.nll - (m as f64).ln()).abs() < 1e-12);
}

#[test]
fn objective_at_identity_equals_metric_nll() {
    let set = sample_set(9, 500, 5, 2.0, 1.3, &[0.2, 0.0, -0.1, 0.3, 0.0]);
    let reference = nll(&ProbMatrix::softmax_rows(set.logits()), set.labels()).unwrap();
    for family in CalibrationFamily::ALL {
        let objective = CalibrationObjective::new(family, &set);
        let theta = objective
            .theta_from_params(&CalibrationParams::identity(family, set.classes()))
            .unwrap();
        assert!((objective.value(&theta) - reference).abs() <= 1e-12, "{family}");
    }
}

fn arb_set() -> impl Strategy<Value = LabeledLogitSet> {
    (2usize..=4, 20usize..=60, any::<u64>(), 0.3f64..3.0).prop_map(|(m, n, seed, t)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let set = sample_set(seed, n, m, 1.5, t, &b);
        // make sure every class shows up so no bias runs to its cap
        let mut labels = set.labels().to_vec();
        for (i, l) in labels.iter_mut().take(m).enumerate() {
            *l = i;
        }
        LabeledLogitSet::new(set.logits().clone(), labels).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn richer_families_fit_at_least_as_well(set in arb_set()) {
        let opts = FitOptions { grad_tol: 1e-9, ..FitOptions::default() };
        let fit = |f| fit_calibration(f, &set, &opts).unwrap();
        let ts = fit(CalibrationFamily::Ts);
        let nbvs = fit(CalibrationFamily::Nbvs);
        let bcts = fit(CalibrationFamily::Bcts);
        let vs = fit(CalibrationFamily::Vs);
        let tol = 1e-6;
        prop_assert!(ts.nll <= ts.identity_nll + 1e-9);
        prop_assert!(bcts.nll <= ts.nll + tol, "BCTS {} TS {}", bcts.nll, ts.nll);
        prop_assert!(vs.nll <= bcts.nll + tol, "VS {} BCTS {}", vs.nll, bcts.nll);
        prop_assert!(vs.nll <= nbvs.nll + tol, "VS {} NBVS {}", vs.nll, nbvs.nll);
    }

    #[test]
    fn bcts_is_invariant_to_a_common_bias_shift(
        rows in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 3), 1..20),
        t in 0.05f64..20.0,
        b in prop::collection::vec(-5.0f64..5.0, 3),
        c in -10.0f64..10.0,
    ) {
        let z = Matrix::from_rows(&rows).unwrap();
        let p = apply_calibration(&CalibrationParams::bcts(t, b.clone()), &z).unwrap();
        let shifted: Vec<f64> = b.iter().map(|v| v + c).collect();
        let q = apply_calibration(&CalibrationParams::bcts(t, shifted), &z).unwrap();
        for (a, b) in p.matrix().as_slice().iter().zip(q.matrix().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
