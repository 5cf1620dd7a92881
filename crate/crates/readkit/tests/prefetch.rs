use proptest::prelude::*;

use readkit::prefetch::with_prefetch;

proptest! {
    #[test]
    fn consumer_sees_producer_sequence(
        items in proptest::collection::vec(any::<u32>(), 0..300),
        depth in 0usize..6,
        take in 0usize..320,
    ) {
        let all = with_prefetch(items.clone().into_iter(), depth, |it| it.collect::<Vec<_>>());
        prop_assert_eq!(&all, &items);
        let head = with_prefetch(items.clone().into_iter(), depth, |it| it.take(take).collect::<Vec<_>>());
        prop_assert_eq!(&head[..], &items[..take.min(items.len())]);
    }
}
