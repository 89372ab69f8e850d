use amu::amuf::{self, FLAG_LABELS, FLAG_TAGS, MAGIC, VERSION};
use amu::AmuError;
use amu_core::{FeatureStore, SplitTag};
use proptest::prelude::*;

fn tag(code: u8) -> SplitTag {
    SplitTag::from_code(code % 3).unwrap()
}

fn store_strategy() -> impl Strategy<Value = FeatureStore> {
    (1usize..12, 1usize..6, 1usize..5, "[a-z0-9 _/.-]{0,12}").prop_flat_map(|(n, d, c, id)| {
        (
            proptest::collection::vec(-1e6f32..1e6, n * d),
            proptest::collection::vec(0..c, n),
            proptest::collection::vec(0u8..3, n),
        )
            .prop_map(move |(features, labels, tags)| {
                let tags = tags.into_iter().map(tag).collect();
                FeatureStore::new(id.clone(), d, c, features, labels, tags).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn encode_then_decode_is_identity(store in store_strategy()) {
        let bytes = amuf::encode(&store).unwrap();
        let back = amuf::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(amuf::encode(&back).unwrap(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(store in store_strategy(), cut in 0.0f64..1.0) {
        let bytes = amuf::encode(&store).unwrap();
        let at = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(amuf::decode(&bytes[..at]).is_err());
    }
}

#[test]
fn single_dimension_round_trips() {
    let store = FeatureStore::new("d1", 1, 2, vec![0.5, -0.25, 3.0], vec![0, 1, 1], vec![SplitTag::Train; 3]).unwrap();
    assert_eq!(amuf::decode(&amuf::encode(&store).unwrap()).unwrap(), store);
}

#[test]
fn empty_store_is_rejected() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&0u64.to_le_bytes());
    bytes.extend_from_slice(&4u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&(FLAG_LABELS | FLAG_TAGS).to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    assert!(matches!(amuf::decode(&bytes), Err(AmuError::Core(_))));
}

#[test]
fn large_store_round_trips_through_a_file() {
    let (n, d, c) = (10_000usize, 16usize, 10usize);
    let features: Vec<f32> = (0..n * d).map(|i| ((i * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let tags: Vec<SplitTag> = (0..n).map(|i| tag((i % 3) as u8)).collect();
    let store = FeatureStore::new("big", d, c, features, labels, tags).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.amuf");
    amuf::write_feature_file(&store, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, amuf::encode(&store).unwrap().len());
    assert_eq!(amuf::read_feature_file(&path).unwrap(), store);
}

#[test]
fn missing_file_reports_its_path() {
    let err = amuf::read_feature_file(std::path::Path::new("/nonexistent/x.amuf")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.amuf"), "{err}");
}
