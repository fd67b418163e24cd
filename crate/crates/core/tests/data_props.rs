use std::collections::HashSet;

use minihes_core::data::{parse_ratings, split_dataset, Delimiter, HdiDataset};
use proptest::prelude::*;

fn rating_lines() -> impl Strategy<Value = Vec<(u8, u8, i16)>> {
    prop::collection::vec((0u8..12, 0u8..9, -50i16..50), 3..60)
}

fn to_text(lines: &[(u8, u8, i16)]) -> String {
    lines
        .iter()
        .map(|(u, i, r)| format!("u{u},i{i},{}\n", f64::from(*r) / 8.0))
        .collect()
}

fn check_transpose(d: &HdiDataset) {
    let from_users: HashSet<_> = (0..d.num_users())
        .flat_map(|u| {
            let (items, ratings) = d.by_user().row(u);
            items
                .iter()
                .zip(ratings)
                .map(move |(&i, &r)| (u, i, r.to_bits()))
                .collect::<Vec<_>>()
        })
        .collect();
    let from_items: HashSet<_> = (0..d.num_items())
        .flat_map(|i| {
            let (users, ratings) = d.by_item().row(i);
            users
                .iter()
                .zip(ratings)
                .map(move |(&u, &r)| (u, i, r.to_bits()))
                .collect::<Vec<_>>()
        })
        .collect();
    let from_entries: HashSet<_> = d
        .entries()
        .iter()
        .map(|t| (t.user, t.item, t.rating.to_bits()))
        .collect();
    assert_eq!(from_users, from_items);
    assert_eq!(from_users, from_entries);
    assert_eq!(d.by_user().nnz(), d.len());
    assert_eq!(d.by_item().nnz(), d.len());
    for u in 0..d.num_users() {
        assert!(d.by_user().row(u).0.windows(2).all(|w| w[0] < w[1]));
    }
    for i in 0..d.num_items() {
        assert!(d.by_item().row(i).0.windows(2).all(|w| w[0] < w[1]));
    }
    assert!(d.density() <= 1.0);
}

proptest! {
    #[test]
    fn canonical_round_trip(lines in rating_lines()) {
        let d = parse_ratings(to_text(&lines).as_bytes(), Delimiter::Comma).unwrap();
        let mut buf = Vec::new();
        d.write_canonical(&mut buf).unwrap();
        let back = parse_ratings(buf.as_slice(), Delimiter::Tab).unwrap();
        prop_assert_eq!(&back, &d);
    }

    #[test]
    fn adjacency_is_consistent_transpose(lines in rating_lines()) {
        let d = parse_ratings(to_text(&lines).as_bytes(), Delimiter::Auto).unwrap();
        check_transpose(&d);
        let distinct: HashSet<_> = lines.iter().map(|(u, i, _)| (u, i)).collect();
        prop_assert_eq!(d.len(), distinct.len());
    }

    #[test]
    fn split_partitions_entries(lines in rating_lines(), seed in any::<u64>()) {
        let d = parse_ratings(to_text(&lines).as_bytes(), Delimiter::Auto).unwrap();
        prop_assume!(d.len() >= 3);
        let (a, b, c) = split_dataset(&d, [0.6, 0.2, 0.2], seed).unwrap();
        let again = split_dataset(&d, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!(&again.0, &a);
        prop_assert_eq!(&again.2, &c);

        prop_assert!(!a.is_empty() && !b.is_empty() && !c.is_empty());
        prop_assert_eq!(a.len() + b.len() + c.len(), d.len());
        let key = |t: &minihes_core::RatingTriple| (t.user, t.item, t.rating.to_bits());
        let mut union = HashSet::new();
        for part in [&a, &b, &c] {
            check_transpose(part);
            prop_assert_eq!(part.num_users(), d.num_users());
            for t in part.entries() {
                prop_assert!(union.insert(key(t)), "entry in two parts");
            }
        }
        let all: HashSet<_> = d.entries().iter().map(key).collect();
        prop_assert_eq!(union, all);
    }
}
