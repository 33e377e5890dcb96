//! Catalog of documented examples and invariants, each a quick check. The
//! same behaviours are also covered by the unit and property tests.

use lebid::domain::{load_dataset, save_dataset};
use lebid::harness::{
    emit_results, estimate_baseline, fit_metric, read_runs_csv, run_case_study, simulate_run,
    summarize, summarize_rows,
};
use lebid::hyper_eb::{self, GramBuilder, MstepProblem};
use lebid::kernel::{gram_matrix, predict_output, reconstruct_impulse, representer_eval, ss1_kernel};
use lebid::lebesgue::{
    band_sequence, detect_events, event_compression_ratio, midpoint_data, quantize_band,
};
use lebid::lti_sim::{plant_to_ss, simulate_noiseless, true_impulse, zoh_discretize};
use lebid::truncgauss::{
    conditional_second_moment, gaussian_band_logprob, sample_tmvn, trunc_norm_mean,
    trunc_norm_second_moment,
};
use lebid::weights::{
    conditional_outputs, em_update, map_em_weights, neg_log_posterior, regularized_ls,
    MONOTONE_SLACK,
};
use lebid::{
    BandConstraint, BandSequence, Dataset, Error, Estimator, ExperimentConfig, Hyperparameters,
    KernelGram, PointSource, SamplerConfig, SamplingConfig, SecondOrderPlant, StateSpace,
    ZohInput,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{self, batch_mean, Rule};
use crate::{outcome, Outcome};

type Check = std::result::Result<(), String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    ensure(
        (a - b).abs() <= tol * (1.0 + b.abs()),
        format!("{what}: {a} vs {b}"),
    )
}

fn ok<T>(r: lebid::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn criterion_8() -> Outcome {
    let checks: Vec<(&str, fn() -> Check)> = vec![
        ("dataset: minimal round trip", dataset_minimal),
        ("dataset: oracle_z round trip is exact", dataset_oracle_exact),
        ("dataset: unwritable path leaves no file", dataset_unwritable),
        ("dataset: eta off grid rejected", dataset_eta_off_grid),
        ("dataset: oracle outside band rejected", dataset_oracle_outside),
        ("types: invariant violations rejected", type_invariants),
        ("input: causal and held", input_causal),
        ("plant: undamped poles at ±i", plant_undamped),
        ("plant: DC gain 1/k", plant_dc_gain),
        ("plant: shipped plant is Hurwitz", plant_hurwitz),
        ("zoh: zero step", zoh_zero_step),
        ("zoh: integrator", zoh_integrator),
        ("zoh: semigroup", zoh_semigroup),
        ("simulate: zero input", sim_zero_input),
        ("simulate: integrator ramp", sim_integrator_ramp),
        ("simulate: step settles at 1/k", sim_step_settles),
        ("simulate: grid refinement invariance", sim_refinement),
        ("impulse: g(0) = CB, integrator g = 1, decay", impulse_values),
        ("quantize: floor convention", quantize_examples),
        ("events: ramp and constant", events_examples),
        ("events: invariants and substep doubling", events_invariants),
        ("bands: ramp and constant", bands_examples),
        ("bands: contain the signal, bounded jumps", bands_invariants),
        ("midpoints: examples, strictly inside", midpoint_examples),
        ("ratio: examples", ratio_examples),
        ("kernel: values and symmetry", kernel_values),
        ("gram: zero input, symmetry, PSD, scaling", gram_properties),
        ("gram: reproduced by representers", gram_reproduced),
        ("representer: zero input", representer_zero),
        ("reconstruct: zero, unit vector, linearity", reconstruct_properties),
        ("predict: zero weights, identity gram", predict_examples),
        ("logprob: full mass, symmetric band, monotone", logprob_examples),
        ("mean: symmetric band, in band to 30σ", mean_examples),
        ("second moment: narrow band", second_moment_narrow),
        ("sampler: draws inside box, unconstrained moments", sampler_checks),
        ("Q̄: unconstrained and point-mass limits, symmetry", qbar_limits),
        ("objective: zero weights, translation invariance", objective_examples),
        ("EM: symmetric bands, fixed point, in-band z̃", em_examples),
        ("EM: monotone trace", em_monotone),
        ("ridge: identity, large penalty, shift equivariance", ridge_examples),
        ("marginal covariance: limits and spectrum", marginal_cov_examples),
        ("M-step: value, trace scaling, never worse", mstep_examples),
        ("EB: determinism and admissible iterates", eb_determinism),
        ("fit: examples and shift asymmetry", fit_examples),
        ("study: empty runs and header-only CSV", empty_study),
        ("study: CSV round trip, cardinality, invariants", study_round_trip),
        ("baseline: midpoints on degenerate bands match oracle", degenerate_midpoint),
    ];
    let total = checks.len();
    let failures: Vec<String> = checks
        .into_iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("[{name}] {e}")))
        .collect();
    for f in &failures {
        println!("  validation failure: {f}");
    }
    outcome(
        failures.is_empty(),
        format!("{} of {total} checks passed", total - failures.len()),
    )
}

fn tiny_dataset() -> Dataset {
    Dataset {
        input: ZohInput::new(1.0, vec![1.0]).unwrap(),
        bands: BandSequence {
            eta: vec![0.0],
            h: 1.0,
            delta: 1.0,
        },
        oracle_z: None,
        events: None,
    }
}

fn dataset_minimal() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path().join("d.json");
    let ds = tiny_dataset();
    ok(save_dataset(&ds, &p))?;
    ensure(ok(load_dataset(&p))? == ds, "round trip changed the dataset")
}

fn dataset_oracle_exact() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path().join("d.json");
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..20 {
        let z: Vec<f64> = (0..50)
            .map(|_| rng.random_range(0.0..1.0) * 10f64.powi(rng.random_range(-300..0)))
            .collect();
        let ds = Dataset {
            input: ZohInput::new(0.1, vec![rng.random::<f64>(); 50]).unwrap(),
            bands: BandSequence {
                eta: vec![0.0; 50],
                h: 1.0,
                delta: 0.1,
            },
            oracle_z: Some(z),
            events: None,
        };
        ok(save_dataset(&ds, &p))?;
        ensure(ok(load_dataset(&p))? == ds, "oracle_z changed in round trip")?;
    }
    Ok(())
}

fn dataset_unwritable() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path().join("missing").join("d.json");
    let err = save_dataset(&tiny_dataset(), &p);
    ensure(matches!(err, Err(Error::Io { .. })), "expected an I/O error")?;
    ensure(!p.exists(), "partial file left behind")
}

fn dataset_eta_off_grid() -> Check {
    let mut ds = tiny_dataset();
    ds.bands.eta = vec![0.5];
    ensure(
        matches!(ds.validate(), Err(Error::EtaOffGrid { .. })),
        "eta = 0.5 accepted",
    )
}

fn dataset_oracle_outside() -> Check {
    let mut ds = tiny_dataset();
    ds.oracle_z = Some(vec![1.0]);
    ensure(
        matches!(ds.validate(), Err(Error::OracleOutOfBand { .. })),
        "z on the open upper edge accepted",
    )?;
    ds.oracle_z = Some(vec![0.0, 0.5]);
    ensure(
        matches!(ds.validate(), Err(Error::LengthMismatch { .. })),
        "length mismatch accepted",
    )
}

fn type_invariants() -> Check {
    ensure(SamplingConfig::new(0.0, 1.0, 1).is_err(), "delta = 0")?;
    ensure(SamplingConfig::new(0.1, -1.0, 1).is_err(), "h < 0")?;
    ensure(SamplingConfig::new(0.1, 1.0, 0).is_err(), "sim_substeps = 0")?;
    ensure(ZohInput::new(0.3, vec![]).is_err(), "empty amplitudes")?;
    ensure(ZohInput::new(0.0, vec![1.0]).is_err(), "delta_u = 0")?;
    ensure(
        ZohInput::new(0.25, vec![1.0]).unwrap().hold_ratio(0.1).is_err(),
        "delta_u off the delta grid",
    )?;
    ensure(Hyperparameters::new(0.0, 1.0, 1.0).is_err(), "gamma = 0")?;
    ensure(Hyperparameters::new(1.0, -1.0, 1.0).is_err(), "beta < 0")?;
    ensure(Hyperparameters::new(1.0, 1.0, 0.0).is_err(), "sigma2 = 0")?;
    ensure(BandConstraint::new(vec![1.0], vec![1.0]).is_err(), "empty band")?;
    ensure(
        SecondOrderPlant { m: 0.0, d: 0.2, k: 1.0 }.validate().is_err(),
        "m = 0",
    )?;
    ensure(
        SecondOrderPlant { m: 1.0, d: 0.2, k: -1.0 }.validate().is_err(),
        "k < 0",
    )
}

fn input_causal() -> Check {
    let u = ZohInput::new(0.5, vec![2.0, -1.0]).unwrap();
    ensure(u.value_at(-1e-12) == 0.0, "u(t<0) != 0")?;
    ensure(u.value_at(0.0) == 2.0 && u.value_at(0.49) == 2.0, "first hold")?;
    ensure(u.value_at(0.5) == -1.0 && u.value_at(1.0) == 0.0, "second hold and tail")
}

fn plant_undamped() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant { m: 1.0, d: 0.0, k: 1.0 }))?;
    let eig = ss.a.clone().complex_eigenvalues();
    for l in eig.iter() {
        ensure(l.re.abs() < 1e-12 && (l.im.abs() - 1.0).abs() < 1e-12, format!("eigenvalue {l}"))?;
    }
    ensure(eig[0].im * eig[1].im < 0.0, "poles not conjugate")
}

fn plant_dc_gain() -> Check {
    for &(m, d, k) in &[(0.05, 0.2, 1.0), (1.0, 3.0, 4.0), (2.0, 0.1, 0.5)] {
        let ss = ok(plant_to_ss(&SecondOrderPlant { m, d, k }))?;
        close(ss.dc_gain().unwrap_or(f64::NAN), 1.0 / k, 1e-12, "dc gain")?;
    }
    Ok(())
}

fn plant_hurwitz() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    ensure(ss.is_hurwitz() && ss.d == 0.0, "default plant not Hurwitz with D = 0")
}

fn integrator() -> StateSpace {
    StateSpace::new(
        DMatrix::from_element(1, 1, 0.0),
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 1.0),
    )
    .unwrap()
}

fn zoh_zero_step() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    let (ad, bd) = ok(zoh_discretize(&ss, 0.0))?;
    ensure(ad == DMatrix::identity(2, 2) && bd.iter().all(|&v| v == 0.0), "not (I, 0)")
}

fn zoh_integrator() -> Check {
    let (ad, bd) = ok(zoh_discretize(&integrator(), 0.37))?;
    close(ad[(0, 0)], 1.0, 1e-15, "Ad")?;
    close(bd[0], 0.37, 1e-15, "Bd")
}

fn zoh_semigroup() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    for &s in &[0.005, 0.1, 0.7] {
        let (a1, b1) = ok(zoh_discretize(&ss, s))?;
        let (a2, b2) = ok(zoh_discretize(&ss, 2.0 * s))?;
        let ea = (&a1 * &a1 - a2).amax();
        let eb = (&a1 * &b1 + &b1 - b2).amax();
        ensure(ea < 1e-10 && eb < 1e-10, format!("step {s}: {ea:e} {eb:e}"))?;
    }
    Ok(())
}

fn sim_zero_input() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    let u = ZohInput::new(0.5, vec![0.0; 4]).unwrap();
    let x = ok(simulate_noiseless(&ss, &u, 0.05, 40))?;
    ensure(x.iter().all(|&v| v == 0.0), "nonzero response to zero input")
}

fn sim_integrator_ramp() -> Check {
    let u = ZohInput::new(1.0, vec![1.0; 5]).unwrap();
    let x = ok(simulate_noiseless(&integrator(), &u, 0.1, 50))?;
    for (k, v) in x.iter().enumerate() {
        close(*v, k as f64 * 0.1, 1e-12, "ramp")?;
    }
    Ok(())
}

fn sim_step_settles() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    let u = ZohInput::new(0.1, vec![1.0; 1000]).unwrap();
    let x = ok(simulate_noiseless(&ss, &u, 0.01, 10_000))?;
    close(*x.last().unwrap(), 1.0, 1e-9, "steady state")
}

fn sim_refinement() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let u = ZohInput::new(0.3, (0..10).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let coarse = ok(simulate_noiseless(&ss, &u, 0.05, 60))?;
    let fine = ok(simulate_noiseless(&ss, &u, 0.01, 300))?;
    for (k, v) in coarse.iter().enumerate() {
        ensure((v - fine[5 * k]).abs() < 1e-10, format!("sample {k}: {v} vs {}", fine[5 * k]))?;
    }
    Ok(())
}

fn impulse_values() -> Check {
    let ss = ok(plant_to_ss(&SecondOrderPlant::default()))?;
    close(true_impulse(&ss, 0.0), ss.c.dot(&ss.b), 1e-15, "g(0)")?;
    for t in [0.0, 0.5, 7.0] {
        close(true_impulse(&integrator(), t), 1.0, 1e-14, "integrator")?;
    }
    let tau = 1.0 / ss.slowest_rate();
    let peak = (0..1000)
        .map(|k| true_impulse(&ss, k as f64 * 0.005).abs())
        .fold(0.0, f64::max);
    ensure(
        true_impulse(&ss, 10.0 * tau).abs() < 1e-3 * peak,
        "impulse does not decay",
    )
}

fn quantize_examples() -> Check {
    ensure(quantize_band(1.3, 1.0) == 1.0, "1.3")?;
    ensure(quantize_band(-0.2, 1.0) == -1.0, "-0.2")?;
    ensure(quantize_band(2.0, 1.0) == 2.0, "2.0")
}

fn events_examples() -> Check {
    let z: Vec<f64> = (0..=300).map(|k| k as f64 * 0.01).collect();
    let ev = detect_events(&z, 0.01, 1.0);
    ensure(ev.len() == 4, format!("{} ramp events", ev.len()))?;
    for (k, e) in ev.iter().enumerate() {
        ensure(e.m == k as i64 && (e.t - k as f64).abs() < 1e-9, format!("event {k}: {e:?}"))?;
    }
    let ev = detect_events(&[0.5; 100], 0.01, 1.0);
    ensure(ev.len() == 1 && ev[0].t == 0.0 && ev[0].m == 0, "constant signal")
}

fn smooth_signal(step: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            let t = k as f64 * step;
            3.0 * (0.7 * t).sin() + 1.3 * (1.9 * t + 0.4).cos()
        })
        .collect()
}

fn events_invariants() -> Check {
    let ev1 = detect_events(&smooth_signal(0.01, 2000), 0.01, 0.5);
    let ev2 = detect_events(&smooth_signal(0.005, 4000), 0.005, 0.5);
    ensure(ev1.windows(2).all(|w| w[0].t < w[1].t), "times not increasing")?;
    ensure(ev1.iter().all(|e| e.value == e.m as f64 * 0.5), "value != m h")?;
    let m1: Vec<i64> = ev1.iter().map(|e| e.m).collect();
    let m2: Vec<i64> = ev2.iter().map(|e| e.m).collect();
    ensure(m1 == m2, format!("{} vs {} events after doubling", m1.len(), m2.len()))
}

fn bands_examples() -> Check {
    let cfg = SamplingConfig::new(0.5, 1.0, 5).map_err(|e| e.to_string())?;
    let z: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
    let b = band_sequence(&z, &cfg);
    ensure(b.eta[..5] == [0.0, 1.0, 1.0, 2.0, 2.0], format!("{:?}", &b.eta[..5]))?;
    let b = band_sequence(&[0.5; 51], &cfg);
    ensure(b.len() == 10 && b.eta.iter().all(|&e| e == 0.0), "constant signal")
}

fn bands_invariants() -> Check {
    let (step, s, h) = (0.01, 10, 0.5);
    let z = smooth_signal(step, 2000);
    let cfg = SamplingConfig::new(step * s as f64, h, s).map_err(|e| e.to_string())?;
    let b = band_sequence(&z, &cfg);
    let max_slope = 3.0 * 0.7 + 1.3 * 1.9;
    let max_jump = (max_slope * cfg.delta / h).ceil() + 1.0;
    for i in 0..b.len() {
        ensure(b.contains(i, z[(i + 1) * s]), format!("sample {i} outside its band"))?;
    }
    ensure(
        b.eta.windows(2).all(|w| ((w[1] - w[0]) / h).abs() <= max_jump),
        "band jump too large",
    )
}

fn midpoint_examples() -> Check {
    let b = |eta: Vec<f64>, h: f64| BandSequence { eta, h, delta: 1.0 };
    ensure(midpoint_data(&b(vec![0.0], 1.0)) == [0.5], "[0]")?;
    ensure(midpoint_data(&b(vec![-1.0, 0.0], 1.0)) == [-0.5, 0.5], "[-1, 0]")?;
    let bs = b(vec![-3.0, 7.0, 0.0], 0.25);
    let m = midpoint_data(&bs);
    ensure((0..3).all(|i| bs.lower(i) < m[i] && m[i] < bs.upper(i)), "midpoint on edge")
}

fn ratio_examples() -> Check {
    let e = detect_events(&[0.5; 3], 1.0, 1.0);
    ensure(event_compression_ratio(&e, 300) == 1.0 / 300.0, "1 event")?;
    let many = vec![e[0]; 300];
    ensure(event_compression_ratio(&many, 300) == 1.0, "300 events")
}

fn kernel_values() -> Check {
    ensure(ss1_kernel(0.0, 0.0, 2.0) == 1.0, "k(0, 0)")?;
    close(ss1_kernel(1.0, 2.0, 1.0), (-2f64).exp(), 1e-16, "k(1, 2)")?;
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    for _ in 0..100 {
        let (a, b, beta) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.1..3.0));
        ensure(ss1_kernel(a, b, beta) == ss1_kernel(b, a, beta), "asymmetric kernel")?;
    }
    Ok(())
}

fn random_input(seed: u64, delta_u: f64, len: usize) -> ZohInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ZohInput::new(delta_u, (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn gram_properties() -> Check {
    let zero = ok(gram_matrix(&ZohInput::new(0.3, vec![0.0; 5]).unwrap(), 0.1, 1.0, 12))?;
    ensure(zero.k.iter().all(|&v| v == 0.0), "zero input gives nonzero K")?;
    let u = random_input(83, 0.3, 40);
    let k = ok(gram_matrix(&u, 0.1, 0.8, 100))?.k;
    ensure(k == k.transpose(), "K not exactly symmetric")?;
    let eig = k.clone().symmetric_eigen().eigenvalues;
    let norm = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(eig.iter().all(|&l| l >= -1e-8 * norm), "K not PSD")?;
    let k3 = ok(gram_matrix(&u.scaled(-3.0), 0.1, 0.8, 100))?.k;
    ensure((k3 - &k * 9.0).amax() < 1e-12 * k.amax(), "scaling is not quadratic")
}

/// The reproducing property: applying the output functional of sample i to
/// representer j gives `K_ij`.
fn gram_reproduced() -> Check {
    let (delta, beta) = (0.1, 1.2);
    let u = random_input(84, 0.2, 5);
    let k = ok(gram_matrix(&u, delta, beta, 8))?.k;
    let rule = Rule::new(40);
    for i in 1..=8 {
        for j in 1..=8 {
            let v: f64 = common::zoh_pieces(&u, i as f64 * delta)
                .iter()
                .map(|&(a, b, amp)| {
                    amp * rule.integrate(|t| representer_eval(&u, delta, j, beta, t).unwrap(), a, b)
                })
                .sum();
            close(v, k[(i - 1, j - 1)], 1e-10, "functional of representer")?;
        }
    }
    Ok(())
}

fn representer_zero() -> Check {
    let u = ZohInput::new(0.3, vec![0.0; 3]).unwrap();
    for t in [0.0, 0.2, 5.0] {
        ensure(ok(representer_eval(&u, 0.1, 4, 1.0, t))? == 0.0, "nonzero representer")?;
    }
    Ok(())
}

fn reconstruct_properties() -> Check {
    let u = random_input(85, 0.3, 6);
    let grid: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
    let r = |c: &[f64]| reconstruct_impulse(c, &u, 0.1, 0.9, &grid).unwrap();
    ensure(r(&[0.0; 10]).iter().all(|&v| v == 0.0), "c = 0")?;
    let mut e = [0.0; 10];
    e[3] = 1.0;
    for (g, &t) in r(&e).iter().zip(&grid) {
        close(*g, ok(representer_eval(&u, 0.1, 4, 0.9, t))?, 1e-14, "unit vector")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(86);
    let c1: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c2: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
    let (a, b, s) = (r(&c1), r(&c2), r(&sum));
    ensure((0..grid.len()).all(|k| (a[k] + b[k] - s[k]).abs() < 1e-12), "not linear")
}

fn predict_examples() -> Check {
    let u = random_input(87, 0.3, 4);
    let k = ok(gram_matrix(&u, 0.1, 1.0, 10))?;
    ensure(ok(predict_output(&k, &[0.0; 10]))?.iter().all(|&v| v == 0.0), "c = 0")?;
    let eye = KernelGram {
        k: DMatrix::identity(3, 3),
        beta: 1.0,
        input_id: 0,
    };
    ensure(ok(predict_output(&eye, &[1.5, -2.0, 0.25]))? == [1.5, -2.0, 0.25], "K = I")
}

fn logprob_examples() -> Check {
    ensure(gaussian_band_logprob(0.0, 1.0, -1e6, 1e6).abs() < 1e-15, "full mass")?;
    for (sigma, b) in [(1.0, 0.5), (2.0, 3.0), (0.1, 0.01)] {
        let want = lebid::special::erf(b / (sigma * 2f64.sqrt())).ln();
        close(gaussian_band_logprob(0.0, sigma, -b, b), want, 1e-13, "symmetric band")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..200 {
        let (mu, a) = (rng.random_range(-40.0..40.0), rng.random_range(-5.0..5.0));
        let b = a + rng.random_range(0.0..3.0);
        let c = b + rng.random_range(0.0..3.0);
        ensure(
            gaussian_band_logprob(mu, 1.0, a, c) >= gaussian_band_logprob(mu, 1.0, a, b),
            format!("mass not monotone at mu {mu}, a {a}, b {b}, c {c}"),
        )?;
    }
    Ok(())
}

fn mean_examples() -> Check {
    for mu in [-3.0, 0.0, 2.5, 1e3] {
        close(trunc_norm_mean(mu, 0.7, mu - 1.0, mu + 1.0), mu, 1e-14, "symmetric band")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(89);
    for _ in 0..500 {
        let sigma = rng.random_range(0.01..3.0);
        let a = rng.random_range(-10.0..10.0);
        let b = a + rng.random_range(1e-6..2.0);
        let mu = a + sigma * rng.random_range(-30.0..30.0);
        let m = trunc_norm_mean(mu, sigma, a, b);
        ensure(a < m && m < b, format!("mean {m} outside ({a}, {b}) for mu {mu}"))?;
    }
    Ok(())
}

fn second_moment_narrow() -> Check {
    for (a, mu) in [(0.3, 0.0), (-2.0, 1.0), (5.0, -4.0)] {
        let b = a + 1e-8;
        let want = (0.5 * (a + b)) * (0.5 * (a + b));
        close(trunc_norm_second_moment(mu, 1.0, a, b), want, 1e-12, "narrow band")?;
    }
    Ok(())
}

fn sampler_checks() -> Check {
    let mu = DVector::from_vec(vec![0.5, -1.0, 0.0]);
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, -0.4, 0.1, -0.4, 0.5]);
    let bx = BandConstraint::new(vec![0.0, -1.0, 3.0], vec![0.2, 1e6, 3.5]).unwrap();
    let d = ok(sample_tmvn(&mu, &s, &bx, 2000, 50, 1))?;
    for r in 0..d.nrows() {
        for i in 0..3 {
            ensure(bx.lower[i] < d[(r, i)] && d[(r, i)] < bx.upper[i], "draw outside box")?;
        }
    }
    let n = 20_000;
    let d = ok(sample_tmvn(&mu, &s, &BandConstraint::around(&[0.0; 3], 1e6), n, 200, 2))?;
    for i in 0..3 {
        let col: Vec<f64> = d.column(i).iter().copied().collect();
        let (m, se) = batch_mean(&col, 50);
        ensure((m - mu[i]).abs() < 5.0 * se, format!("mean {i}: {m} vs {}", mu[i]))?;
        for j in 0..=i {
            let p: Vec<f64> = (0..n).map(|r| (d[(r, i)] - mu[i]) * (d[(r, j)] - mu[j])).collect();
            let (m, se) = batch_mean(&p, 50);
            ensure((m - s[(i, j)]).abs() < 5.0 * se, format!("cov {i}{j}: {m}"))?;
        }
    }
    Ok(())
}

fn qbar_limits() -> Check {
    let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
    let cfg = SamplerConfig {
        n_samples: 20_000,
        burn_in: 200,
        seed: 3,
    };
    let est = ok(conditional_second_moment(&s, &BandConstraint::around(&[0.0; 2], 1e6), &cfg))?;
    ensure(est.q == est.q.transpose(), "Q̄ not symmetric")?;
    ensure((0..2).all(|i| est.q[(i, i)] >= 0.0), "negative diagonal")?;
    ensure((&est.q - &s).amax() < 0.1, format!("unconstrained Q̄ {:?}", est.q))?;
    let cov = &est.q - &est.mean * est.mean.transpose();
    ensure(cov.symmetric_eigen().eigenvalues.min() > -0.05, "implied covariance not PSD")?;
    let zs = [0.7, -1.2];
    let tiny = BandConstraint::around(&zs, 1e-9);
    let est = ok(conditional_second_moment(&s, &tiny, &SamplerConfig { n_samples: 50, ..cfg }))?;
    let want = DMatrix::from_row_slice(2, 2, &[0.49, -0.84, -0.84, 1.44]);
    ensure((est.q - want).amax() < 1e-8, "point-mass limit")
}

fn small_problem() -> (DMatrix<f64>, Vec<f64>) {
    let u = random_input(90, 0.3, 6);
    let k = gram_matrix(&u, 0.1, 1.0, 15).unwrap().k;
    let c: Vec<f64> = (0..15).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    (k, c)
}

fn objective_examples() -> Check {
    let (k, c) = small_problem();
    let eta: Vec<f64> = (0..15).map(|i| (i % 4) as f64 - 2.0).collect();
    let bands = BandConstraint::new(eta.clone(), eta.iter().map(|e| e + 1.0).collect()).unwrap();
    let at_zero = ok(neg_log_posterior(&[0.0; 15], &k, &bands, 0.1, 2.0))?;
    let want: f64 = -eta.iter().map(|&e| gaussian_band_logprob(0.0, 0.1f64.sqrt(), e, e + 1.0)).sum::<f64>();
    close(at_zero, want, 1e-13, "objective at c = 0")?;
    // shifting bands and predictions together leaves the data term alone
    let kc = &k * DVector::from_column_slice(&c);
    let shift = 3.0;
    let data = |off: f64| -> f64 {
        (0..15)
            .map(|i| gaussian_band_logprob(kc[i] + off, 0.3, eta[i] + off, eta[i] + 1.0 + off))
            .sum()
    };
    close(data(shift), data(0.0), 1e-12, "translation invariance")
}

fn em_examples() -> Check {
    let (k, c) = small_problem();
    let (sigma2, gamma) = (0.05, 0.5);
    let gt = 2.0 * sigma2 * gamma;
    let kc = &k * DVector::from_column_slice(&c);
    let sym = BandConstraint::new(
        kc.iter().map(|v| v - 0.4).collect(),
        kc.iter().map(|v| v + 0.4).collect(),
    )
    .unwrap();
    let next = ok(em_update(&c, &k, &sym, sigma2, gamma))?;
    let want = ok(regularized_ls(&k, kc.as_slice(), gt))?;
    for (a, b) in next.iter().zip(&want) {
        close(*a, *b, 1e-10, "symmetric bands")?;
    }
    // a fixed point of c = (K + γ̃I)⁻¹Kc is c = 0 with bands symmetric about 0
    let centered = BandConstraint::around(&[0.0; 15], 0.5);
    let sol = ok(map_em_weights(&k, &centered, sigma2, gamma, Some(&[0.0; 15]), 5, 1e-8))?;
    ensure(sol.c.iter().all(|v| v.abs() < 1e-12), "fixed point moved")?;
    let eta: Vec<f64> = kc.iter().map(|v| (v * 2.0).floor() / 2.0 + 0.5).collect();
    let off = BandConstraint::new(eta.clone(), eta.iter().map(|e| e + 0.5).collect()).unwrap();
    let z = ok(conditional_outputs(&c, &k, &off, sigma2))?;
    ensure(
        (0..15).all(|i| off.lower[i] < z[i] && z[i] < off.upper[i]),
        "z̃ outside band",
    )
}

fn em_monotone() -> Check {
    let cfg = ExperimentConfig {
        total_time: 5.0,
        ..Default::default()
    };
    for run in 0..5 {
        let ds = ok(simulate_run(&cfg, 200 + run))?.dataset;
        let k = ok(gram_matrix(&ds.input, 0.1, 1.0 + run as f64, ds.n()))?.k;
        let sol = ok(map_em_weights(&k, &BandConstraint::from_bands(&ds.bands), 0.02, 0.5, None, 60, 1e-12))?;
        ensure(
            sol.objective_trace.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK),
            format!("objective rose in run {run}"),
        )?;
    }
    Ok(())
}

fn ridge_examples() -> Check {
    let eye = DMatrix::identity(4, 4);
    let z = [1.0, -2.0, 0.5, 8.0];
    let c = ok(regularized_ls(&eye, &z, 1.0))?;
    ensure(c.iter().zip(&z).all(|(a, b)| (a - b / 2.0).abs() < 1e-15), "K = I, γ̃ = 1")?;
    let (k, _) = small_problem();
    let zk: Vec<f64> = (0..15).map(|i| i as f64 * 0.1).collect();
    let big = 1e12;
    let c = ok(regularized_ls(&k, &zk, big))?;
    ensure(c.iter().zip(&zk).all(|(a, b)| (a - b / big).abs() < 1e-20 + 1e-6 * b / big), "large γ̃")?;
    let v: Vec<f64> = (0..15).map(|i| (i as f64).sin()).collect();
    let zv: Vec<f64> = zk.iter().zip(&v).map(|(a, b)| a + b).collect();
    let (c0, c1, cv) = (
        ok(regularized_ls(&k, &zk, 0.3))?,
        ok(regularized_ls(&k, &zv, 0.3))?,
        ok(regularized_ls(&k, &v, 0.3))?,
    );
    ensure((0..15).all(|i| (c1[i] - c0[i] - cv[i]).abs() < 1e-9), "shift equivariance")
}

fn marginal_cov_examples() -> Check {
    let gb0 = ok(GramBuilder::new(ZohInput::new(0.3, vec![0.0; 3]).unwrap(), 0.1, 6))?;
    let rho = Hyperparameters::new(1.0, 1.0, 0.7).unwrap();
    let s = ok(hyper_eb::marginal_cov(&rho, &gb0))?;
    ensure(s == DMatrix::identity(6, 6) * 0.7, "zero input")?;
    let gb = ok(GramBuilder::new(random_input(91, 0.3, 10), 0.1, 25))?;
    let s = ok(hyper_eb::marginal_cov(&Hyperparameters::new(1e14, 1.0, 0.2).unwrap(), &gb))?;
    ensure((s - DMatrix::identity(25, 25) * 0.2).amax() < 1e-10, "large γ")?;
    let s = ok(hyper_eb::marginal_cov(&Hyperparameters::new(0.4, 2.0, 0.3).unwrap(), &gb))?;
    ensure(s.symmetric_eigen().eigenvalues.min() >= 0.3 - 1e-10, "eigenvalue below σ²")
}

fn mstep_examples() -> Check {
    let gb0 = ok(GramBuilder::new(ZohInput::new(0.3, vec![0.0; 3]).unwrap(), 0.1, 3))?;
    let rho = Hyperparameters::new(1.0, 1.0, 1.0).unwrap();
    close(ok(hyper_eb::mstep_objective(&rho, &DMatrix::identity(3, 3), &gb0))?, 3.0, 1e-14, "S = Q̄ = I")?;
    let gb = ok(GramBuilder::new(random_input(92, 0.3, 10), 0.1, 20))?;
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let f = DMatrix::from_fn(20, 20, |_, _| rng.random_range(-1.0..1.0));
    let q = &f * f.transpose() / 20.0;
    let rho = Hyperparameters::new(0.5, 1.3, 0.1).unwrap();
    let s = ok(hyper_eb::marginal_cov(&rho, &gb))?;
    let tr = (s.try_inverse().unwrap() * &q).trace();
    let v1 = ok(hyper_eb::mstep_objective(&rho, &q, &gb))?;
    let v2 = ok(hyper_eb::mstep_objective(&rho, &(&q * 2.0), &gb))?;
    close(v2 - v1, tr, 1e-9, "trace scaling")?;
    let problem = ok(MstepProblem::new(&q, &gb))?;
    for _ in 0..50 {
        let start = Hyperparameters::from_log(&[
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-5.0..1.0),
        ]);
        let before = ok(problem.eval(&start))?;
        let rho = ok(hyper_eb::optimize_mstep(&q, &start, &gb, 60))?;
        ensure(rho.validate().is_ok(), "optimizer left Γ")?;
        ensure(ok(problem.eval(&rho))? <= before, "optimizer made things worse")?;
    }
    Ok(())
}

fn eb_determinism() -> Check {
    let cfg = ExperimentConfig {
        total_time: 3.0,
        ..Default::default()
    };
    let ds = ok(simulate_run(&cfg, 9))?.dataset;
    let sc = SamplerConfig {
        n_samples: 100,
        burn_in: 20,
        seed: 5,
    };
    let init = hyper_eb::default_rho_init(&ds);
    let a = ok(hyper_eb::eb_estimate(&ds, &init, 4, &sc))?;
    let b = ok(hyper_eb::eb_estimate(&ds, &init, 4, &sc))?;
    ensure(a == b, "traces differ between identical runs")?;
    ensure(a.1.rho_per_iter.iter().all(|r| r.validate().is_ok()), "iterate outside Γ")
}

fn fit_examples() -> Check {
    let x = [1.0, 3.0, -2.0, 0.5];
    ensure(ok(fit_metric(&x, &x))? == 100.0, "x̂ = x")?;
    let m = x.iter().sum::<f64>() / 4.0;
    ensure(ok(fit_metric(&[m; 4], &x))?.abs() < 1e-12, "x̂ = mean")?;
    let xh = [1.1, 2.8, -2.1, 0.4];
    let shifted: Vec<f64> = xh.iter().map(|v| v + 4.0).collect();
    ensure(ok(fit_metric(&shifted, &x))? < ok(fit_metric(&xh, &x))?, "shift of x̂ alone not penalized")
}

fn empty_study() -> Check {
    let cfg = ExperimentConfig {
        n_runs: 0,
        ..Default::default()
    };
    let (r, t, s) = ok(run_case_study(&cfg))?;
    ensure(r.is_empty() && t.is_empty() && s.n_runs == 0, "non-empty output")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ok(emit_results(&r, &t, &s, dir.path()))?;
    let csv = std::fs::read_to_string(dir.path().join("runs.csv")).map_err(|e| e.to_string())?;
    ensure(csv.lines().count() == 1 && csv.starts_with("run_id,"), "not header-only")?;
    let json = std::fs::read_to_string(dir.path().join("summary.json")).map_err(|e| e.to_string())?;
    serde_json::from_str::<serde_json::Value>(&json).map_err(|e| e.to_string())?;
    ensure(summarize(&[]).n_runs == 0, "summary of nothing")
}

fn study_round_trip() -> Check {
    let cfg = ExperimentConfig {
        total_time: 6.0,
        n_runs: 2,
        seed: 11,
        em_iters: 2,
        q_samples: 100,
        q_burn_in: 20,
        mstep_budget: 40,
        impulse_points: 21,
        ..Default::default()
    };
    let (r, t, s) = ok(run_case_study(&cfg))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ok(emit_results(&r, &t, &s, dir.path()))?;
    let rows = ok(read_runs_csv(dir.path().join("runs.csv")))?;
    ensure(rows.len() == cfg.n_runs * cfg.estimators.len(), "row count")?;
    let s2 = summarize_rows(&rows);
    close(s2.mean_n_events, s.mean_n_events, 1e-12, "mean N_L")?;
    for e in Estimator::ALL {
        close(s2.estimators[&e].mean, s.estimators[&e].mean, 1e-12, "mean fit")?;
        close(s2.estimators[&e].median, s.estimators[&e].median, 1e-12, "median fit")?;
    }
    for run in &r {
        ensure(run.n_events <= run.n, "N_L > N")?;
        ensure(run.outcomes.iter().all(|o| o.fit <= 100.0), "fit above 100")?;
    }
    for tr in &t {
        ensure(
            (0..tr.bands.len()).all(|i| tr.bands.contains(i, tr.oracle_z[i])),
            "oracle sample outside band",
        )?;
    }
    Ok(())
}

fn degenerate_midpoint() -> Check {
    let cfg = ExperimentConfig {
        total_time: 10.0,
        ..Default::default()
    };
    let sim = ok(simulate_run(&cfg, 4))?;
    let z = sim.dataset.oracle_z.clone().unwrap();
    let h = 1e-9;
    let mut ds = sim.dataset.clone();
    ds.bands = BandSequence {
        eta: z.iter().map(|&v| quantize_band(v, h)).collect(),
        h,
        delta: ds.bands.delta,
    };
    ds.events = None;
    let a = ok(estimate_baseline(&ds, &cfg, PointSource::Midpoint))?;
    let b = ok(estimate_baseline(&ds, &cfg, PointSource::Oracle))?;
    let fa = ok(fit_metric(&a.predicted, &sim.x_true))?;
    let fb = ok(fit_metric(&b.predicted, &sim.x_true))?;
    close(fa, fb, 1e-4, "midpoint vs oracle fit")
}
