use agifl_core::data::{partition, synth_blobs, DataShard, PartitionScheme};
use proptest::prelude::*;

fn assert_partition(shards: &[DataShard], n: usize) -> Result<(), TestCaseError> {
    let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices().iter().copied()).collect();
    all.sort_unstable();
    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_scheme_is_a_set_partition(
        classes in 2usize..6,
        per_class in 1usize..40,
        users in 1usize..20,
        shards_per_user in 1usize..4,
        sharded in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let data = synth_blobs(classes, per_class, 1, 0.1, 0).unwrap();
        let n = data.len();
        let scheme = if sharded { PartitionScheme::Sharded { shards_per_user } } else { PartitionScheme::Iid };
        let needed = if sharded { users * shards_per_user } else { users };
        let result = partition(&data, users, scheme, seed);
        if needed > n {
            prop_assert!(result.is_err());
        } else {
            let shards = result.unwrap();
            prop_assert_eq!(shards.len(), users);
            assert_partition(&shards, n)?;
            if !sharded {
                let sizes: Vec<usize> = shards.iter().map(DataShard::len).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }
}

#[test]
fn iid_mnist_sized_split() {
    let data = synth_blobs(10, 6000, 1, 0.1, 0).unwrap();
    let shards = partition(&data, 100, PartitionScheme::Iid, 1).unwrap();
    assert!(shards.iter().all(|s| s.len() == 600));
}
