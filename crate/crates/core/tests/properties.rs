//! Property tests for the structural invariants of each module.

use std::sync::OnceLock;

use latepoints::excursions::{decompose, Annuli};
use latepoints::interlacements::{RiSampler, Transience};
use latepoints::late_stats::{axis_pairs, bernoulli_field, build_pattern_bernoulli, double_points, pattern_count};
use latepoints::lattice::{symmetries, FiniteSet, PointZ};
use latepoints::potential::{capacity, GreenTable};
use latepoints::rng::replica_rng;
use latepoints::slt::{check_round_trip, forward_slt, ChainSpec, Eta};
use latepoints::torus::{late_set, run_walk, time_threshold, u_scale, Torus, TorusConfig};
use proptest::prelude::*;
use rand::Rng;

fn table() -> &'static GreenTable {
    static T: OnceLock<GreenTable> = OnceLock::new();
    T.get_or_init(|| GreenTable::for_radius(3, 8).unwrap())
}

fn small_set(max_len: usize, span: i64) -> impl Strategy<Value = FiniteSet> {
    prop::collection::vec(prop::collection::vec(0..=span, 3), 1..=max_len)
        .prop_map(|pts| FiniteSet::new(3, pts.into_iter().map(PointZ).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_is_symmetric(x in prop::collection::vec(-6i64..=6, 3), s in 0usize..48) {
        let sym = &symmetries(3)[s];
        let p = PointZ(x);
        prop_assert_eq!(table().g(&p).unwrap(), table().g(&sym.apply(&p)).unwrap());
    }

    #[test]
    fn capacity_is_monotone(k in small_set(4, 3), extra in prop::collection::vec(prop::collection::vec(0i64..=3, 3), 1..3)) {
        let mut pts = k.points().to_vec();
        pts.extend(extra.into_iter().map(PointZ));
        let kp = FiniteSet::new(3, pts).unwrap();
        let a = capacity(&k, table()).unwrap();
        let b = capacity(&kp, table()).unwrap();
        prop_assert!(a.cap <= b.cap + 1e-12, "{} > {}", a.cap, b.cap);
        // Equilibrium entries are non-negative and sum to the capacity.
        prop_assert!(b.equilibrium.iter().all(|&e| e >= -1e-12));
        prop_assert!((b.equilibrium.iter().sum::<f64>() - b.cap).abs() < 1e-10);
    }

    #[test]
    fn far_pairs_beat_the_neighbour_pair(x in prop::collection::vec(-6i64..=6, 3)) {
        let p = PointZ(x);
        prop_assume!(p.l1() >= 2);
        let near = FiniteSet::from_coords(3, &[&[0, 0, 0], &[1, 0, 0]]).unwrap();
        let far = FiniteSet::new(3, vec![PointZ::origin(3), p]).unwrap();
        prop_assert!(capacity(&far, table()).unwrap().cap > capacity(&near, table()).unwrap().cap);
    }

    #[test]
    fn double_points_equal_axis_pattern_counts(sites in prop::collection::vec(0usize..216, 0..120)) {
        let t = Torus::new(6, 3);
        let total: usize = axis_pairs(3).iter().map(|k| pattern_count(&sites, &t, k).unwrap()).sum();
        prop_assert_eq!(double_points(&sites, &t), total);
    }

    #[test]
    fn pattern_fields_are_nested(seed in any::<u64>(), p_lo in 0.0f64..0.3, dp in 0.0f64..0.3) {
        let t = Torus::new(8, 3);
        let p_hi = p_lo + dp;
        let b = bernoulli_field(t.clone(), p_hi, seed).unwrap();
        let small = b.realize(&[p_lo]).unwrap();
        let big = b.realize(&[p_hi]).unwrap();
        prop_assert!(small.iter().all(|x| big.binary_search(x).is_ok()));
        let shapes: Vec<(FiniteSet, f64)> = axis_pairs(3).into_iter().map(|s| (s, p_hi)).collect();
        let f = build_pattern_bernoulli(t, &shapes, seed).unwrap();
        let small = f.realize(&[p_lo; 3]).unwrap();
        let big = f.realize(&[p_hi; 3]).unwrap();
        prop_assert!(small.iter().all(|x| big.binary_search(x).is_ok()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn late_sets_are_nested_and_match_counts(seed in any::<u64>(), n in 4usize..9) {
        let config = TorusConfig::new(n, 3, seed, 0).unwrap();
        let g0 = table().g0();
        let vol = config.volume();
        let top = time_threshold(u_scale(1.2, vol, g0), vol);
        let (counts, field) = run_walk(&config, top, g0, true).unwrap();
        let counts = counts.unwrap();
        prop_assert_eq!(counts.total(), top + 1);
        let mut prev: Option<Vec<usize>> = None;
        for alpha in [0.1, 0.3, 0.5, 0.8, 1.0, 1.2] {
            let late = late_set(&field, alpha, None).unwrap();
            // Membership via first hitting times equals zero count at the threshold.
            let t = time_threshold(u_scale(alpha, vol, g0), vol);
            let (c, _) = run_walk(&config, t, g0, true).unwrap();
            let zeros: Vec<usize> = c.unwrap().counts.iter().enumerate().filter(|(_, &v)| v == 0).map(|(i, _)| i).collect();
            prop_assert_eq!(&late.members, &zeros);
            if let Some(p) = &prev {
                prop_assert!(late.members.iter().all(|x| p.binary_search(x).is_ok()));
            }
            prev = Some(late.members);
        }
    }

    #[test]
    fn slt_round_trip_is_exact(seed in any::<u64>(), n in 2usize..7, steps in 1usize..40) {
        let mut rng = replica_rng(seed, 0);
        let spec = ChainSpec::random(n, steps, &mut rng);
        let z0 = rng.random_range(0..n);
        let mut eta = Eta::poisson(&spec.mu, seed).unwrap();
        let run = forward_slt(&spec, &mut eta, z0, steps).unwrap();
        run.check_invariants(&spec, &mut eta).unwrap();
        prop_assert_eq!(run.consumed.len(), steps);
        check_round_trip(&spec, &run.chain, &run.xi, &run).unwrap();
    }

    #[test]
    fn excursion_schedules_are_ordered(seed in any::<u64>(), len in 10usize..3000) {
        let annuli = Annuli::new(3, 1, 3, 7).unwrap();
        let mut rng = replica_rng(seed, 1);
        let mut x = vec![0i64; 3];
        let mut trace = vec![x.clone()];
        for _ in 0..len {
            let k = rng.random_range(0..3);
            x[k] += if rng.random_bool(0.5) { 1 } else { -1 };
            trace.push(x.clone());
        }
        let s = decompose(&trace, &annuli, true).unwrap();
        s.check(&annuli).unwrap();
        for w in s.excursions.windows(2) {
            let d = w[0].d.unwrap();
            prop_assert!(w[0].r <= d && d <= w[1].r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn interlacement_layers_are_monotone(seed in any::<u64>(), u1 in 0.1f64..1.0, du in 0.0f64..1.0) {
        static S: OnceLock<RiSampler> = OnceLock::new();
        let sampler = S.get_or_init(|| {
            let t = GreenTable::for_radius(3, 10).unwrap();
            RiSampler::new(&t, 5, 9, Transience::HarmonicReturn).unwrap()
        });
        let u2 = u1 + du;
        let s = sampler.sample(u2, &mut replica_rng(seed, 2)).unwrap();
        let vol = s.first_level.len();
        for i in 0..vol {
            prop_assert!(!s.is_vacant(i, u2) || s.is_vacant(i, u1));
        }
        prop_assert!(s.count_at(u1) <= s.count_at(u2));
        prop_assert_eq!(s.count_at(u2), s.traj_count);
    }
}
