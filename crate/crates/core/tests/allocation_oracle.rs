//! Extremal FP allocation against exhaustive enumeration in exact arithmetic.

use num_rational::Ratio;
use segmetrics::instance::{
    distribute_fp_continuous_min, distribute_fp_extremal, distribute_fp_proportional, InstanceOverlap, Sense,
};

type Q = Ratio<i64>;

fn exact_total(cells: &[InstanceOverlap], alloc: &[u64]) -> Q {
    cells
        .iter()
        .zip(alloc)
        .map(|(c, &f)| {
            if c.tp == 0 {
                Q::from_integer(0)
            } else {
                Q::new(c.tp as i64, (c.size() + f) as i64)
            }
        })
        .sum()
}

/// Every way to hand `fp` pixels to `k` instances.
fn compositions(fp: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![fp]];
    }
    (0..=fp)
        .flat_map(|first| {
            compositions(fp - first, k - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn brute_force(cells: &[InstanceOverlap], fp: u64) -> (Q, Q) {
    let totals: Vec<Q> = compositions(fp, cells.len())
        .iter()
        .map(|a| exact_total(cells, a))
        .collect();
    (*totals.iter().min().unwrap(), *totals.iter().max().unwrap())
}

fn all_overlaps() -> Vec<InstanceOverlap> {
    (1..=5u64)
        .flat_map(|size| (0..=size).map(move |tp| InstanceOverlap::new(tp, size - tp)))
        .collect()
}

fn configurations(k: usize) -> Vec<Vec<InstanceOverlap>> {
    let base = all_overlaps();
    let mut out: Vec<Vec<InstanceOverlap>> = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                base.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out
}

#[test]
fn greedy_and_vertex_match_enumeration() {
    let mut checked = 0;
    for k in 1..=3 {
        for cells in configurations(k) {
            for fp in 0..=6 {
                let (min, max) = brute_force(&cells, fp);
                let lo = distribute_fp_extremal(&cells, fp, Sense::Min).unwrap();
                let hi = distribute_fp_extremal(&cells, fp, Sense::Max).unwrap();
                assert_eq!(lo.fp.iter().sum::<u64>(), fp);
                assert_eq!(hi.fp.iter().sum::<u64>(), fp);
                assert_eq!(exact_total(&cells, &lo.fp), min, "min {cells:?} fp={fp}");
                assert_eq!(exact_total(&cells, &hi.fp), max, "max {cells:?} fp={fp}");
                assert_eq!(hi.fp.iter().filter(|&&f| f > 0).count().min(1), (fp > 0) as usize);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, (20 + 400 + 8000) * 7);
}

#[test]
fn continuous_min_never_exceeds_integer_min() {
    for k in 1..=2 {
        for cells in configurations(k) {
            for fp in 0..=6 {
                let cont = distribute_fp_continuous_min(&cells, fp as f64).unwrap();
                let int = distribute_fp_extremal(&cells, fp, Sense::Min).unwrap();
                let prop = distribute_fp_proportional(&cells, fp as f64).unwrap();
                assert!(cont.total <= int.total + 1e-12, "{cells:?} fp={fp}");
                assert!(cont.total <= prop.total + 1e-12, "{cells:?} fp={fp}");
                assert!((cont.fp.iter().sum::<f64>() - fp as f64).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn worked_examples() {
    let cells = [InstanceOverlap::new(1, 0), InstanceOverlap::new(10, 0)];
    let lo = distribute_fp_extremal(&cells, 2, Sense::Min).unwrap();
    assert_eq!(lo.fp, vec![2, 0]);
    assert_eq!(exact_total(&cells, &lo.fp), Q::new(4, 3));

    let cells = [InstanceOverlap::new(10, 0), InstanceOverlap::new(10, 0)];
    let hi = distribute_fp_extremal(&cells, 10, Sense::Max).unwrap();
    assert_eq!(hi.fp, vec![10, 0]);
    assert_eq!(exact_total(&cells, &hi.fp), Q::new(3, 2));
}
