mod common;

use common::priced;
use costenv_core::domain::{TaskName, TaskSpec};
use costenv_core::oracle::{
    brute_force_min, enumerate_paths, greedy_trajectory, satisfies_chain, shortest_path_gt,
};
use costenv_core::toolgen::enumerate_tools;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (u32, Vec<i64>)> {
    (4u32..=8).prop_flat_map(|n| {
        let count = (n * (n + 1) / 2) as usize;
        (Just(n), prop::collection::vec(100i64..5000, count))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dijkstra_matches_brute_force((n, prices) in instance()) {
        let lib = priced(n, &prices);
        let gt = shortest_path_gt(&lib, lib.task.initial_mask()).unwrap();
        let brute = brute_force_min(&lib).unwrap();
        prop_assert_eq!(gt.cost, brute.cost);
        prop_assert_eq!(gt, brute);
    }

    #[test]
    fn gt_is_chained_and_greedy_never_cheaper((n, prices) in instance()) {
        let lib = priced(n, &prices);
        let s0 = lib.task.initial_mask();
        let gt = shortest_path_gt(&lib, s0).unwrap();
        prop_assert!(satisfies_chain(&lib, &gt.tools));
        let greedy = greedy_trajectory(&lib, s0).unwrap();
        prop_assert!(greedy.cost >= gt.cost);
        prop_assert!(satisfies_chain(&lib, &greedy.tools));
        prop_assert_eq!(shortest_path_gt(&lib, s0).unwrap(), gt);
    }

    #[test]
    fn random_banned_sets_below_the_cut_stay_solvable(n in 4u32..=8, picks in prop::collection::vec(any::<prop::sample::Index>(), 0..7)) {
        let mut lib = priced(n, &[1500]);
        let visible: Vec<String> = lib.visible().map(|t| t.name.clone()).collect();
        for p in picks.iter().take(n as usize - 2) {
            lib.banned.insert(p.get(&visible).clone());
        }
        prop_assert!(shortest_path_gt(&lib, lib.task.initial_mask()).is_ok());
    }
}

#[test]
fn library_size_and_span_bijection() {
    for n in 4..=10u32 {
        let lib = enumerate_tools(
            TaskSpec::new(TaskName::Dining, n).unwrap(),
            &common::enums(),
        );
        assert_eq!(lib.tools.len() as u32, n * (n + 1) / 2);
        assert_eq!(lib.composite().count() as u32, n * (n - 1) / 2);
        assert_eq!(lib.visible().count() as u32, n * (n + 1) / 2 - 1);
        for i in 1..=n {
            for j in i..=n {
                assert_eq!(lib.by_span((i, j)).unwrap().span, (i, j));
            }
        }
        let mut names: Vec<_> = lib.tools.iter().map(|t| &t.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), lib.tools.len());
    }
}

#[test]
fn path_listing_counts() {
    assert_eq!(enumerate_paths(4).len(), 7);
    assert_eq!(enumerate_paths(5).len(), 15);
    for p in enumerate_paths(6) {
        assert!(p.len() >= 2);
        assert_eq!(p.first().unwrap().0, 1);
        assert_eq!(p.last().unwrap().1, 6);
        assert!(p.windows(2).all(|w| w[0].1 + 1 == w[1].0));
    }
}
