use modsel_core::bandit::{confidence_budget, epoch_end};
use modsel_core::env::misspec_of_kernel;
use modsel_core::harness::{read_log, write_log, RegretTrace};
use modsel_core::mistest::{run_test, MisTestConfig};
use modsel_core::models::est_oracle;
use modsel_core::{
    gamma_for, Algorithm, Environment, KernelTable, ModIgw, ModelClass, Noise, Partition,
    RateFunction, RunConfig, Sample,
};
use proptest::prelude::*;

fn environment() -> impl Strategy<Value = Environment> {
    (2usize..5, 2usize..4).prop_flat_map(|(nx, k)| {
        (
            prop::collection::vec(0.1f64..1.0, nx),
            prop::collection::vec(0.0f64..=1.0, nx * k),
            any::<u64>(),
        )
            .prop_map(move |(w, means, seed)| {
                let total: f64 = w.iter().sum();
                let w = w.iter().map(|v| v / total).collect();
                let rows = means.chunks(k).map(|c| c.to_vec()).collect();
                Environment::new(w, k, rows, Noise::Bernoulli, seed).unwrap()
            })
    })
}

fn classes(env: &Environment) -> Vec<ModelClass> {
    let (nx, k) = (env.num_contexts(), env.num_arms());
    vec![
        ModelClass::tabular(&Partition::Constant, nx, k).unwrap(),
        ModelClass::tabular(&Partition::PerArm, nx, k).unwrap(),
        ModelClass::tabular(&Partition::Full, nx, k).unwrap(),
    ]
}

fn samples(env: &Environment, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = modsel_core::env::stream_rng(seed, 3);
    (0..n)
        .map(|i| {
            let (x, r) = env.sample_round(&mut rng);
            let a = i % env.num_arms();
            Sample::new(x, a, r[a])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn run_invariants(env in environment(), seed in any::<u64>(), tau1 in 8u64..40, c1 in prop::sample::select(vec![1e-4, 1e-2, 1.0])) {
        let cs = classes(&env);
        let mut cfg = RunConfig::new(3000, seed);
        cfg.tau1 = tau1;
        cfg.c1 = c1;
        let mut run = ModIgw::new(&env, &cs, &Algorithm::ModIgw, cfg.clone()).unwrap();
        let uniform = KernelTable::uniform(env.num_contexts(), env.num_arms());
        let k = env.num_arms() as f64;
        let mut rounds = Vec::new();
        let mut epochs = Vec::new();
        let mut prev_set = run.state().index_set.clone();
        while !run.finished() {
            // every kernel the run plays keeps a K / (K + gamma) share of the uniform misspecification
            let gamma = run.state().gamma;
            for c in &cs {
                let b = misspec_of_kernel(&env, c, run.kernel()).unwrap();
                let bu = misspec_of_kernel(&env, c, &uniform).unwrap();
                prop_assert!(b >= k / (k + gamma) * bu - 1e-12);
            }
            let state = run.state().clone();
            prop_assert_eq!(state.tau_cur, epoch_end(tau1, state.m).unwrap());
            rounds.extend(run.run_epoch());
            if run.finished() && state.tau_cur > cfg.horizon {
                break;
            }
            let rec = run.end_epoch().unwrap();
            prop_assert!(rec.index_set.iter().all(|i| prev_set.contains(i)));
            prop_assert!(rec.index_set.contains(&(cs.len() - 1)));
            prop_assert_eq!(rec.i_next, rec.index_set[0]);
            prop_assert_eq!(rec.zeta, confidence_budget(cfg.delta, cs.len(), rec.m));
            prop_assert_eq!(
                rec.gamma_next,
                gamma_for(&cfg.rate(), cs[rec.i_next].dim(), env.num_arms(), rec.m, cfg.delta, cs.len(), tau1)
            );
            prev_set = rec.index_set.clone();
            epochs.push(rec);
        }
        let log = modsel_core::bandit::RunLog { seed, rounds, epochs };
        let trace = RegretTrace::from_log(&log).unwrap();
        prop_assert_eq!(trace.at(0), 0.0);
        for t in 1..=trace.horizon() {
            let step = trace.increment(t - 1, t);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&step));
        }
        let mut last = 0;
        for &(_, i) in &trace.index_trajectory {
            prop_assert!(i >= last);
            last = i;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_log(&path, &log).unwrap();
        prop_assert_eq!(read_log(&path, seed).unwrap(), log);
    }

    #[test]
    fn oracle_picks_minimum_validation_loss(env in environment(), n in 4usize..400, seed in any::<u64>()) {
        let cs = classes(&env);
        let data = samples(&env, n, seed);
        let fit = est_oracle(&cs, cs.len(), &data, 0.5).unwrap();
        let best = fit.validation_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let chosen = fit.validation_losses[fit.selected()];
        prop_assert!(chosen <= best + 1e-12);
        prop_assert!(fit.model.table().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn last_class_is_never_flagged(env in environment(), n in 6usize..600, seed in any::<u64>(), zeta in 1e-6f64..0.9) {
        let cs = classes(&env);
        let data = samples(&env, n, seed);
        let config = MisTestConfig::new(0.5, zeta, RateFunction::new(1e-6).unwrap()).unwrap();
        let v = run_test(&data, cs.len() - 1, &cs, &config).unwrap();
        prop_assert!(!v.misspecified);
        prop_assert_eq!(v.n_train + v.n_holdout, n);
    }

    #[test]
    fn gamma_ordering(d_small in 1usize..50, extra in 0usize..50, m in 1u32..20, tau1 in 2u64..1000) {
        let rate = RateFunction::default();
        let small = gamma_for(&rate, d_small, 4, m, 0.1, 3, tau1);
        let large = gamma_for(&rate, d_small + extra, 4, m, 0.1, 3, tau1);
        prop_assert!(small >= large);
        prop_assert!((small / large - ((d_small + extra) as f64 / d_small as f64).sqrt()).abs() < 1e-9);
    }
}
