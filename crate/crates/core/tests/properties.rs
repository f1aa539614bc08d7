use proptest::prelude::*;
use terawht_core::dataset::BlockSpec;
use terawht_core::external::{plan_external, run_external, ExternalMode, ExternalOptions};
use terawht_core::parallel::{plan_parallel, run_parallel};
use terawht_core::subspace::{fold, folded_coefficient_index, random_full_rank};
use terawht_core::transform::{energy_exact, transformed, wht_bruteforce};
use terawht_core::{inverse_wht_inplace, DatasetFile, Signal};

fn int_signal(max_n: u32, bound: i64) -> impl Strategy<Value = Signal> {
    (0..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-bound..=bound, 1usize << n)
            .prop_map(|v| Signal::time_i64(v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_matches_bruteforce(x in int_signal(10, 1 << 20)) {
        prop_assert_eq!(transformed(&x).unwrap(), wht_bruteforce(&x).unwrap());
    }

    #[test]
    fn transform_twice_scales_by_dimension(x in int_signal(12, 1 << 20)) {
        let twice = transformed(&transformed(&x).unwrap()).unwrap();
        let scale = 1i64 << x.log2_dim();
        let expect: Vec<i64> = x.as_i64().unwrap().iter().map(|v| v * scale).collect();
        prop_assert_eq!(twice.as_i64().unwrap(), &expect[..]);

        let mut y = transformed(&x).unwrap();
        inverse_wht_inplace(&mut y).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn linearity(n in 0u32..10, seed in any::<u64>(), a in -50i64..50, b in -50i64..50) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i64> = (0..1 << n).map(|_| rng.random_range(-1000..1000)).collect();
        let z: Vec<i64> = (0..1 << n).map(|_| rng.random_range(-1000..1000)).collect();
        let comb: Vec<i64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
        let tx = transformed(&Signal::time_i64(x).unwrap()).unwrap();
        let tz = transformed(&Signal::time_i64(z).unwrap()).unwrap();
        let tc = transformed(&Signal::time_i64(comb).unwrap()).unwrap();
        let expect: Vec<i64> = tx.as_i64().unwrap().iter().zip(tz.as_i64().unwrap()).map(|(p, q)| a * p + b * q).collect();
        prop_assert_eq!(tc.as_i64().unwrap(), &expect[..]);
    }

    #[test]
    fn parseval_exact(x in int_signal(12, 1 << 16)) {
        let y = transformed(&x).unwrap();
        let ex = energy_exact(x.as_i64().unwrap()).unwrap();
        let ey = energy_exact(y.as_i64().unwrap()).unwrap();
        prop_assert_eq!(ey, ex << x.log2_dim());
    }

    #[test]
    fn parseval_float(n in 0u32..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..1 << n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = transformed(&Signal::time_f64(x.clone()).unwrap()).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.as_f64().unwrap().iter().map(|v| v * v).sum();
        let scaled = ex * (n as f64).exp2();
        prop_assert!((ey - scaled).abs() <= 1e-9 * scaled.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn parallel_matches_serial(x in int_signal(11, 1 << 20), p in 1u32..4) {
        prop_assume!(p < x.log2_dim());
        let plan = plan_parallel(x.log2_dim(), p).unwrap();
        plan.check_disjoint().unwrap();
        let (y, stats) = run_parallel(x.clone(), &plan).unwrap();
        prop_assert_eq!(stats.barrier_syncs, p as usize + 1);
        prop_assert_eq!(y, transformed(&x).unwrap());
    }

    #[test]
    fn fold_commutes_with_transform(d_in in 1u32..=12, cut in 0u32..=12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let d_out = d_in - cut.min(d_in);
        let map = random_full_rank(d_in, d_out, seed).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x: Vec<i64> = (0..1 << d_in).map(|_| rng.random_range(-1 << 20..1 << 20)).collect();
        let sig = Signal::time_i64(x.clone()).unwrap();
        let folded = fold(&sig, &map).unwrap();
        prop_assert_eq!(folded.as_i64().unwrap().iter().sum::<i64>(), x.iter().sum::<i64>());
        let y = transformed(&sig).unwrap();
        let yf = transformed(&folded).unwrap();
        for i in 0..1u64 << d_out {
            prop_assert_eq!(
                yf.as_i64().unwrap()[i as usize],
                y.as_i64().unwrap()[folded_coefficient_index(&map, i) as usize]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_block_partition_round_trip(x in int_signal(10, i64::MAX), split in 0u32..6) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let n = x.log2_dim();
        let mut ds = DatasetFile::create(&path, n, x.kind()).unwrap();
        let block = 1u64 << split.min(n);
        let data = x.as_i64().unwrap();
        for start in (0..1u64 << n).step_by(block as usize) {
            let spec = BlockSpec::new(start, block);
            ds.write_block(spec, &data[start as usize..(start + block) as usize]).unwrap();
        }
        let mut back = Vec::new();
        for start in (0..1u64 << n).step_by(block as usize) {
            back.extend(ds.read_block::<i64>(BlockSpec::new(start, block)).unwrap());
        }
        prop_assert_eq!(&back[..], data);
    }

    #[test]
    fn external_matches_in_memory(x in int_signal(11, 1 << 20), b in 1u32..8, s in 0u32..7, blocked in any::<bool>()) {
        let s = s.min(b - 1);
        let dir = tempfile::tempdir().unwrap();
        let mut ds = DatasetFile::from_signal(dir.path().join("x.bin"), &x).unwrap();
        let mode = if blocked { ExternalMode::Blocked } else { ExternalMode::EntryWise };
        let plan = plan_external(x.log2_dim(), b, mode, 8 << s).unwrap();
        run_external(&mut ds, &plan, ExternalOptions::default()).unwrap();
        prop_assert_eq!(ds.read_signal().unwrap(), transformed(&x).unwrap());
    }
}
