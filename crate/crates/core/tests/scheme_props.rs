use proptest::prelude::*;
use proxstep_core::constraints::{evaluate_all, AffineWall, AffineWalls, ConstraintSystem};
use proxstep_core::particles::SphereSystem;
use proxstep_core::projection::MassMetric;
use proxstep_core::scheme::{simulate, ConstantForce, Scenario};

/// Walls `<n_k, q> + c_k >= 0` with `c_k > 0`, so the origin is interior.
fn walls_strategy() -> impl Strategy<Value = (usize, Vec<(Vec<f64>, f64)>)> {
    (1usize..=3).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec(
                (prop::collection::vec(-1.0f64..1.0, d), 0.05f64..1.0),
                1..=5,
            ),
        )
    })
}

fn vector(d: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_runs_keep_the_invariants(
        (d, walls) in walls_strategy(),
        seed in (vector(3, 3.0), vector(3, 2.0), prop::collection::vec(0.2f64..4.0, 3)),
        h in 0.005f64..0.1,
    ) {
        let walls: Vec<AffineWall> = walls
            .into_iter()
            .filter(|(n, _)| n.iter().map(|x| x * x).sum::<f64>() > 1e-4)
            .map(|(n, c)| AffineWall::new(n, c, 0.0))
            .collect();
        prop_assume!(!walls.is_empty());
        let (u0, f, masses) = (seed.0[..d].to_vec(), seed.1[..d].to_vec(), seed.2[..d].to_vec());
        let mut scn = Scenario::new(
            "walls",
            Box::new(AffineWalls::new(d, walls).unwrap()),
            Box::new(ConstantForce(f)),
            vec![0.0; d],
            u0,
            0.5,
        );
        scn.metric = MassMetric::new(masses).unwrap();
        let traj = simulate(&scn, h).unwrap();
        for r in &traj.records {
            let g = evaluate_all(&*scn.constraints, r.t, &r.q).unwrap();
            prop_assert!(g.iter().all(|x| *x >= -1e-9), "{g:?}");
            prop_assert!(r.lambda.iter().all(|l| *l >= 0.0));
            let scale = 1.0 + r.u.iter().fold(0.0f64, |m, x| m.max(x.abs())) / h;
            prop_assert!(r.balance_residual <= 1e-8 * scale);
            prop_assert!(r.complementarity <= 1e-8);
        }
    }

    #[test]
    fn unforced_energy_never_grows(
        (d, walls) in walls_strategy(),
        u0 in vector(3, 3.0),
        masses in prop::collection::vec(0.2f64..4.0, 3),
        h in 0.005f64..0.1,
    ) {
        let walls: Vec<AffineWall> = walls
            .into_iter()
            .filter(|(n, _)| n.iter().map(|x| x * x).sum::<f64>() > 1e-4)
            .map(|(n, c)| AffineWall::new(n, c, 0.0))
            .collect();
        prop_assume!(!walls.is_empty());
        let mut scn = Scenario::new(
            "walls",
            Box::new(AffineWalls::new(d, walls).unwrap()),
            Box::new(ConstantForce(vec![0.0; d])),
            vec![0.0; d],
            u0[..d].to_vec(),
            0.5,
        );
        scn.metric = MassMetric::new(masses[..d].to_vec()).unwrap();
        let traj = simulate(&scn, h).unwrap();
        for w in traj.records.windows(2) {
            prop_assert!(scn.metric.energy(&w[1].u) <= scn.metric.energy(&w[0].u) + 1e-12);
        }
    }

    #[test]
    fn contact_impulses_have_zero_net_momentum(
        q in prop::collection::vec(-3.0f64..3.0, 12),
        weights in prop::collection::vec(0.0f64..5.0, 6),
    ) {
        let s = SphereSystem::uniform(4, 0.1).unwrap();
        let mut total = [0.0; 12];
        let mut g = [0.0; 12];
        for (k, w) in weights.iter().enumerate() {
            if s.grad(k, 0.0, &q, &mut g).is_err() {
                return Ok(());
            }
            for (t, x) in total.iter_mut().zip(&g) {
                *t += w * x;
            }
        }
        for c in 0..3 {
            let p: f64 = (0..4).map(|i| total[3 * i + c]).sum();
            prop_assert!(p.abs() <= 1e-12);
        }
    }

    #[test]
    fn free_flight_is_reproduced_exactly(
        q0 in vector(3, 1.0),
        u0 in vector(3, 1.0),
        k in 1u32..40,
    ) {
        // walls far away never engage
        let walls = (0..3)
            .map(|i| {
                let mut n = vec![0.0; 3];
                n[i] = 1.0;
                AffineWall::new(n, 100.0, 0.0)
            })
            .collect();
        let scn = Scenario::new(
            "free",
            Box::new(AffineWalls::new(3, walls).unwrap()),
            Box::new(ConstantForce(vec![0.0; 3])),
            q0.clone(),
            u0.clone(),
            1.0,
        );
        let h = 1.0 / f64::from(k);
        let traj = simulate(&scn, h).unwrap();
        for r in &traj.records {
            prop_assert_eq!(&r.u, &u0);
            prop_assert!(r.lambda.iter().all(|l| *l == 0.0));
        }
        let last = traj.last();
        for i in 0..3 {
            prop_assert!((last.q[i] - (q0[i] + u0[i])).abs() < 1e-13);
        }
    }
}

#[test]
fn sphere_runs_never_overlap_at_grid_times() {
    // a converging cluster of four spheres
    let s = SphereSystem::uniform(4, 0.5).unwrap();
    let q0 = vec![0.0, 0.0, 0.0, 1.2, 0.1, 0.0, 0.1, 1.3, 0.0, 1.1, 1.2, 0.2];
    let u0 = vec![
        1.0, 1.0, 0.0, -1.0, 0.5, 0.0, 0.5, -1.0, 0.1, -1.0, -1.0, 0.0,
    ];
    let scn = Scenario::new(
        "cluster",
        Box::new(s.clone()),
        Box::new(ConstantForce(vec![0.0; 12])),
        q0,
        u0,
        1.0,
    );
    for h in [1e-2, 1e-3] {
        let traj = simulate(&scn, h).unwrap();
        for r in &traj.records {
            for k in 0..s.pair_count() {
                assert!(s.eval(k, r.t, &r.q).unwrap() >= -1e-10);
            }
        }
        let ke = s.diagnostics(&traj).kinetic_energy;
        assert!(ke.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
