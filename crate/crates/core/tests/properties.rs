use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sparsemud::asymptotics::{
    self, integrate, poisson_initial_state, poisson_polynomial_solution, regular_initial_state, IntegrationConfig,
    PoissonSystem, RegularFactors, RegularSystem,
};
use sparsemud::channel::{apply_erasure, transmit, BitVector};
use sparsemud::ensemble::{degree_stats, sample, sample_regular, Ensemble, SparseCode};
use sparsemud::experiments::{run_batch, write_stats_csv, BatchConfig, GridRange};
use sparsemud::oracle::{enumerate_solutions, DEFAULT_CAP};
use sparsemud::ucp::{run_ucp, run_ucp_with, DecoderState, UcpOptions};

fn ensemble() -> impl Strategy<Value = Ensemble> {
    prop_oneof![Just(Ensemble::Poisson), Just(Ensemble::Regular)]
}

fn instance() -> impl Strategy<Value = (Ensemble, usize, f64, f64, u64)> {
    (
        ensemble(),
        1usize..300,
        prop_oneof![Just(0.5), Just(1.0), Just(1.5), Just(2.0), Just(3.0)],
        prop_oneof![Just(1.0), Just(2.0), Just(3.0), Just(2.5), Just(4.0)],
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edges_are_conserved((ens, k, beta, c, seed) in instance()) {
        let Ok(code) = sample(ens, k, beta, c, seed) else { return Ok(()) };
        let s = degree_stats(&code);
        let by_chip: usize = s.chip_hist.iter().enumerate().map(|(l, n)| l * n).sum();
        let by_user: usize = s.user_hist.iter().enumerate().map(|(d, n)| d * n).sum();
        prop_assert_eq!(by_chip, s.num_entries);
        prop_assert_eq!(by_user, s.num_entries);
        let m = code.num_chips() as f64;
        prop_assert!((beta - k as f64 / m).abs() <= 1.0 / m + 1e-12);
    }

    #[test]
    fn regular_degrees_are_exact(k in 1usize..500, beta in 0.5f64..3.0, c in 1usize..5, seed: u64) {
        let Ok(code) = sample_regular(k, beta, c as f64, seed) else { return Ok(()) };
        let s = degree_stats(&code);
        prop_assert_eq!(s.user_hist.len(), c + 1);
        prop_assert_eq!(s.user_hist[c], k);
    }

    #[test]
    fn sampling_is_deterministic((ens, k, beta, c, seed) in instance()) {
        let a = sample(ens, k, beta, c, seed);
        let b = sample(ens, k, beta, c, seed);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_json_string(), b.to_json_string()),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "sampling outcome differs between calls"),
        }
    }

    #[test]
    fn transmission_is_linear((ens, k, beta, c, seed) in instance(), user in any::<prop::sample::Index>()) {
        let Ok(code) = sample(ens, k, beta, c, seed) else { return Ok(()) };
        let bits = BitVector::random(k, seed ^ 1);
        let y = transmit(&code, &bits).unwrap();
        prop_assert_eq!(transmit(&code, &bits.negated()).unwrap(), y.negated());

        // flipping the signs of one user's column equals flipping its bit
        let u = user.index(k) as u32;
        let flipped_entries: Vec<(u32, u32, i8)> = code
            .entries()
            .map(|e| (e.chip, e.user, if e.user == u { -e.sign } else { e.sign }))
            .collect();
        let flipped_code = SparseCode::explicit(k, code.num_chips(), &flipped_entries).unwrap();
        let mut values = bits.values().to_vec();
        values[u as usize] = -values[u as usize];
        let flipped_bits = BitVector::new(values).unwrap();
        prop_assert_eq!(transmit(&flipped_code, &bits).unwrap().y, transmit(&code, &flipped_bits).unwrap().y);

        for (chip, &v) in y.y.iter().enumerate() {
            let deg = code.chip_degree(chip) as i32;
            prop_assert!(v.abs() <= deg);
            prop_assert_eq!((v - deg).rem_euclid(2), 0);
        }
    }

    #[test]
    fn decoder_is_sound((ens, k, beta, c, seed) in instance(), erase in prop_oneof![Just(0.0), Just(0.1)]) {
        let Ok(code) = sample(ens, k, beta, c, seed) else { return Ok(()) };
        let bits = BitVector::random(k, seed ^ 2);
        let signal = transmit(&code, &bits).unwrap();
        let Ok((code, signal)) = apply_erasure(&code, &signal, erase, seed ^ 3) else { return Ok(()) };
        let r = run_ucp_with(&code, &signal, Some(&bits), UcpOptions { seed: seed ^ 4, record_trace: true }).unwrap();
        let trace = r.trace.as_ref().unwrap();
        prop_assert_eq!(trace.len(), k + 1);
        let x_d_steps = (r.x_d * k as f64).round() as usize;
        for row in &trace[1..] {
            let d = row.decision.unwrap();
            if d.guessed {
                break;
            }
            prop_assert_eq!(d.value, bits[d.variable], "forced decision disagrees with the truth");
        }
        for row in trace.iter().filter(|r| r.step <= x_d_steps) {
            prop_assert_eq!(row.bit_errors, Some(0));
        }
        prop_assert!(r.x_d <= r.x_c);
        if r.guesses == 0 {
            prop_assert_eq!(r.estimate.values(), bits.values());
            prop_assert_eq!(r.ber, Some(0.0));
        }
        if r.contradictions == 0 {
            prop_assert_eq!(transmit(&code, &r.estimate).unwrap().y, signal.y.clone());
        } else {
            // a consistent instance cannot conflict before its first guess
            prop_assert!(r.x_c > 0.0 && r.x_d < r.x_c && r.x_c <= 1.0);
        }
    }

    #[test]
    fn residual_invariants_hold_after_every_decimation((ens, k, beta, c, seed) in instance()) {
        let Ok(code) = sample(ens, k.min(120), beta, c, seed) else { return Ok(()) };
        let bits = BitVector::random(code.num_users(), seed ^ 5);
        let signal = transmit(&code, &bits).unwrap();
        let mut state = DecoderState::new(&code, &signal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        while state.step(&mut rng).is_some() {
            for chip in 0..code.num_chips() {
                let y = state.residual_signal(chip);
                let deg = state.residual_degree(chip) as i32;
                prop_assert_eq!((y - deg).rem_euclid(2), 0, "parity broken on chip {}", chip);
                if state.is_live(chip) {
                    prop_assert!(y.abs() < deg, "live chip {} is extremal or overfull", chip);
                }
            }
        }
        prop_assert!(state.is_complete());
    }

    #[test]
    fn zero_guess_runs_have_a_unique_solution(k in 1usize..13, beta in prop_oneof![Just(0.5), Just(1.0), Just(2.0)], c in 2usize..5, seed: u64) {
        let Ok(code) = sample(Ensemble::Regular, k, beta, c as f64, seed) else { return Ok(()) };
        let bits = BitVector::random(k, seed ^ 7);
        let signal = transmit(&code, &bits).unwrap();
        let set = enumerate_solutions(&code, &signal, DEFAULT_CAP).unwrap();
        prop_assert!(set.contains(&bits));
        let r = run_ucp(&code, &signal, seed ^ 8, Some(&bits)).unwrap();
        if r.guesses == 0 {
            prop_assert_eq!(set.len(), 1);
        }
    }

    #[test]
    fn ode_densities_stay_nonnegative(beta in 0.5f64..3.0, regular: bool) {
        let cfg = IntegrationConfig { dx: 5e-4, ..IntegrationConfig::default() };
        let ens = if regular { Ensemble::Regular } else { Ensemble::Poisson };
        let t = asymptotics::solve(ens, beta, 3.0, None, cfg).unwrap();
        let mut last_total = f64::INFINITY;
        for s in &t.samples {
            prop_assert!(s.y.iter().all(|&v| v >= -1e-9));
            let total: f64 = s.y[t.num_omega()..].iter().sum();
            prop_assert!(total <= last_total + 1e-12);
            last_total = total;
        }
    }
}

#[test]
fn unit_factor_regular_system_reproduces_poisson() {
    for beta in [1.5, 2.0] {
        let p0 = poisson_initial_state(beta, 3.0, 31).unwrap();
        let mut r0 = regular_initial_state(beta, 3.0, 31).unwrap();
        r0.omega[0] = p0.omega[0];
        let cfg = IntegrationConfig::default();
        let tp = integrate(&PoissonSystem::for_state(&p0), &p0, cfg).unwrap();
        let tr = integrate(&RegularSystem::for_state(&r0, RegularFactors::Unit), &r0, cfg).unwrap();
        let n = tp.samples.len().min(tr.samples.len()) - 1;
        for i in 0..n {
            let a = tp.state(i);
            let b = tr.state(i);
            assert!((a.omega[0] - b.omega[0]).abs() <= 1e-8);
            for l in 2..=31 {
                assert!((a.phi[l] - b.phi[l]).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn x_d_is_stable_under_step_halving() {
    for ens in [Ensemble::Poisson, Ensemble::Regular] {
        for beta in [1.5, 1.75, 2.0, 2.25] {
            let cfg = IntegrationConfig { record: false, ..IntegrationConfig::default() };
            let a = asymptotics::solve(ens, beta, 3.0, None, cfg).unwrap();
            let b = asymptotics::solve(ens, beta, 3.0, None, IntegrationConfig { dx: 5e-5, ..cfg }).unwrap();
            assert!((a.x_d - b.x_d).abs() <= 1e-6, "{ens} beta={beta}: {} vs {}", a.x_d, b.x_d);
        }
    }
}

#[test]
fn polynomial_x_d_matches_integration() {
    for beta in [1.0, 1.5, 2.0, 2.5] {
        let sol = poisson_polynomial_solution(beta, 3.0, 40).unwrap();
        let ode = asymptotics::solve(Ensemble::Poisson, beta, 3.0, Some(40), IntegrationConfig::default()).unwrap();
        assert!((sol.x_d(1e-4) - ode.x_d).abs() < 1e-7, "beta={beta}");
    }
}

#[test]
fn batches_are_reproducible() {
    let config = BatchConfig {
        ensemble: Ensemble::Regular,
        users: 2000,
        loads: "1.5:2.0:0.25".parse::<GridRange>().unwrap(),
        degrees: GridRange::single(3.0),
        erasure: 0.0,
        samples: 12,
        seed: 99,
    };
    let csv = || {
        let mut buf = Vec::new();
        write_stats_csv(&run_batch(&config).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let threaded = pool.install(csv);
    assert_eq!(csv(), threaded);
}

#[test]
fn interquartile_ranges_shrink_with_size() {
    let stats = |users| {
        run_batch(&BatchConfig {
            ensemble: Ensemble::Regular,
            users,
            loads: "1.8:2.4:0.2".parse().unwrap(),
            degrees: GridRange::single(3.0),
            erasure: 0.0,
            samples: 100,
            seed: 5,
        })
        .unwrap()
    };
    let small = stats(1000);
    let large = stats(10000);
    for (s, l) in small.iter().zip(&large) {
        assert!(l.x_d.median < 1.0);
        assert!(
            l.x_d.q3 - l.x_d.q1 < s.x_d.q3 - s.x_d.q1,
            "beta={}: IQR {} at K=1e4 vs {} at K=1e3",
            s.load,
            l.x_d.q3 - l.x_d.q1,
            s.x_d.q3 - s.x_d.q1
        );
    }
}
