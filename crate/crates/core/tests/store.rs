//! Pool formats: round trips, total parsing and committed fixtures.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dkbo::linalg::Matrix;
use dkbo::store::{
    decode_binary, encode_binary, load_pool, read_csv, save_pool, standardize_targets, write_csv, PoolFormat,
};
use dkbo::synth::{generate, SyntheticSpec};
use dkbo::CandidatePool;
use proptest::prelude::*;

fn arb_pool() -> impl Strategy<Value = CandidatePool> {
    (1usize..12, 1usize..6, any::<bool>(), prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,12}", 0..3))
        .prop_flat_map(|(n, d, labeled, meta)| {
            (
                prop::collection::vec(-1e6f32..1e6f32, n * d),
                prop::collection::vec(-1e9f64..1e9f64, n),
                Just((n, d, labeled, meta)),
            )
                .prop_map(|(x, y, (n, d, labeled, meta))| {
                    let ids = (0..n).map(|i| format!("r-{i}")).collect();
                    let x = Matrix::from_vec(n, d, x.into_iter().map(f64::from).collect());
                    CandidatePool::new(ids, x, labeled.then_some(y), meta).unwrap()
                })
        })
}

proptest! {
    #[test]
    fn binary_round_trip_is_exact(pool in arb_pool()) {
        let back = decode_binary(&encode_binary(&pool).unwrap()).unwrap();
        prop_assert_eq!(back, pool);
    }

    #[test]
    fn csv_round_trip_within_tolerance(pool in arb_pool()) {
        let mut buf = Vec::new();
        write_csv(&pool, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.ids(), pool.ids());
        for (a, b) in back.x().as_slice().iter().zip(pool.x().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        prop_assert_eq!(back.y().is_some(), pool.y().is_some());
        if let (Some(a), Some(b)) = (back.y(), pool.y()) {
            for (u, v) in a.iter().zip(b) {
                prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn binary_decoding_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200), pool in arb_pool(), cut in any::<prop::sample::Index>(), flip in any::<prop::sample::Index>()) {
        let _ = decode_binary(&bytes);
        let mut enc = encode_binary(&pool).unwrap();
        let _ = decode_binary(&enc[..cut.index(enc.len())]);
        let k = flip.index(enc.len());
        enc[k] ^= 0xA5;
        if let Ok(p) = decode_binary(&enc) {
            // Anything accepted satisfies the pool invariants by construction.
            prop_assert!(p.x().is_finite());
        }
    }

    #[test]
    fn csv_parsing_is_total(text in "[a-z0-9,.\\-\\n]{0,120}") {
        let _ = read_csv(format!("id,e0,y\n{text}").as_bytes());
        let _ = read_csv(text.as_bytes());
    }

    #[test]
    fn standardization_round_trip_and_idempotence(y in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let (s, st) = standardize_targets(&y).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        for (i, v) in y.iter().enumerate() {
            prop_assert!((st.inverse(s[i]) - v).abs() <= 1e-12 * v.abs().max(1.0) * 10.0);
            if sd > 0.0 {
                prop_assert!((s[i] - (v - mean) / sd).abs() < 1e-9);
            }
        }
        if !st.degenerate {
            let (again, _) = standardize_targets(&s).unwrap();
            for (a, b) in again.iter().zip(&s) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let one =
        CandidatePool::new(vec!["only".into()], Matrix::from_vec(1, 1, vec![0.5]), Some(vec![3.0]), BTreeMap::new())
            .unwrap();
    for fmt in [PoolFormat::Binary, PoolFormat::Csv] {
        let path = dir.path().join(format!("one.{fmt:?}"));
        save_pool(&one, &path, fmt).unwrap();
        assert_eq!(load_pool(&path, fmt).unwrap(), one);
    }
    let unlabeled = one.without_labels();
    let path = dir.path().join("u.csv");
    save_pool(&unlabeled, &path, PoolFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next().unwrap(), "id,e0");
    assert!(load_pool(&path, PoolFormat::Csv).unwrap().y().is_none());
    assert!(save_pool(&one, dir.path().join("missing/dir/p.bin"), PoolFormat::Binary).is_err());
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn committed_fixtures_regenerate_identically() {
    let mut checked = 0;
    for entry in std::fs::read_dir(fixture_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let spec: SyntheticSpec = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let committed = std::fs::read(path.with_extension("bin")).unwrap();
            let fresh = encode_binary(&generate(&spec).unwrap()).unwrap();
            assert!(committed == fresh, "{} differs from its spec", path.display());
            let pool = decode_binary(&committed).unwrap();
            assert_eq!(pool.meta()["generator"], serde_json::to_string(&spec).unwrap());
            checked += 1;
        }
    }
    assert!(checked >= 4);
}
