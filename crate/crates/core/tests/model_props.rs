use proptest::prelude::*;
use ruin_core::{ClaimDistribution, Grid, HazardModel, ModelParams, Policy, PolicyTable, State};

fn params() -> ModelParams {
    ModelParams::new(
        2.0,
        0.25,
        3.0,
        HazardModel::Weibull { shape: 1.4, scale: 0.8 },
        ClaimDistribution::LogNormal { meanlog: -0.5, sdlog: 0.6 },
    )
    .unwrap()
}

fn table(seed: u64) -> PolicyTable {
    let p = params();
    let grid = Grid::new(&p, 12, 9).unwrap();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let slices = (0..=grid.n_s)
        .map(|i| {
            (0..grid.slice_len(i))
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect()
        })
        .collect();
    PolicyTable::new(grid, p, slices).unwrap()
}

proptest! {
    #[test]
    fn table_retention_stays_in_the_unit_interval(
        seed in any::<u64>(),
        s in -1.0f64..4.0,
        x in -1.0f64..3.0,
        w in -1.0f64..4.0,
    ) {
        let q = table(seed).evaluate(&State::new(s, x, w));
        prop_assert!((0.0..=1.0).contains(&q), "retention {q}");
    }

    #[test]
    fn table_retains_nothing_at_or_above_the_barrier(seed in any::<u64>(), s in 0.0f64..3.0, over in 0.0f64..2.0) {
        let p = params();
        let b = p.barrier(s).unwrap();
        prop_assert_eq!(table(seed).evaluate(&State::new(s, b + over, 0.0)), 0.0);
    }

    #[test]
    fn table_reproduces_its_nodes(seed in any::<u64>(), i in 0usize..=12, j in 0usize..9, k in 0usize..=12) {
        let t = table(seed);
        let k = k.min(i);
        let g = t.grid;
        let state = State::new(g.s(i), g.x(j), g.w(k));
        prop_assume!(!t.params.on_or_above_barrier(state.s, state.x));
        prop_assert!((t.evaluate(&state) - t.node(i, j, k)).abs() < 1e-12);
    }

    #[test]
    fn constant_policy_returns_its_retention(q in 0.0f64..=1.0, s in 0.0f64..3.0, x in 0.0f64..2.0) {
        let policy = Policy::constant(q).unwrap();
        prop_assert_eq!(policy.evaluate(&State::new(s, x, 0.0)), q);
    }

    #[test]
    fn drift_is_affine_in_retention(q in 0.0f64..=1.0) {
        let p = params();
        let expected = p.drift(0.0) + q * (p.drift(1.0) - p.drift(0.0));
        prop_assert!((p.drift(q) - expected).abs() < 1e-12);
        prop_assert!(p.drift(0.0) < 0.0 && p.drift(1.0) > 0.0);
    }
}

#[test]
fn out_of_range_retentions_are_rejected() {
    assert!(Policy::constant(1.5).is_err());
    assert!(Policy::constant(-0.1).is_err());
    assert!(Policy::constant(f64::NAN).is_err());
    let p = params();
    let grid = Grid::new(&p, 2, 2).unwrap();
    let mut slices: Vec<Vec<f64>> = (0..=2).map(|i| vec![0.5; grid.slice_len(i)]).collect();
    slices[1][0] = 1.2;
    assert!(PolicyTable::new(grid, p, slices).is_err());
}
